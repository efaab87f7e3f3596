"""Synthetic grounded-translation benchmark.

Every example is a 10-token templated sentence mentioning one color and one
animal concept (two vision tokens per sentence, a fixed 20% vision-token
rate).  The paired "image" holds one ground-truth object per mentioned
concept — feature vector = the concept's prototype plus Gaussian noise — and
several distractor objects drawn from background concepts that no sentence
ever mentions.  The target side is a token-to-token re-encoding of the
source: a seeded permutation of the source word list, marked with a ``_t``
suffix so the two string spaces stay disjoint, plus one constant trailing
token.  A text-only model can therefore translate everything except the
degraded concept words, which are recoverable only from the object features.

Object category labels mimic a detector's label vocabulary: each concept has
a pool of label variants whose vectors in the emitted embeddings file are
the concept's embedding prototype plus label-specific Gaussian noise of the
same ``noise_std``.  The knob thus degrades relevance detection smoothly: at
0 every ground-truth object beats every distractor; larger values push more
labels below the detection threshold.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusRecord, FeatureRef, write_corpus, write_feature_file
from .embeddings import write_embeddings_file
from .preprocess import degrade_token_strings
from .types import EntitySpan, ObjectSet

COLOR_WORDS = (
    "red", "blue", "green", "white", "black", "brown",
    "yellow", "purple", "orange", "gray", "pink", "teal",
)
ANIMAL_WORDS = (
    "dog", "cat", "horse", "bird", "cow", "sheep",
    "fox", "deer", "goat", "rabbit", "duck", "pig",
)
BACKGROUND_WORDS = (
    "wall", "table", "window", "fence", "door", "rock",
    "chair", "sign", "roof", "pole", "bench", "crate",
)

# Ten tokens each, slots at positions 1 (color) and 2 (animal).
TEMPLATES = (
    ("a", "{color}", "{animal}", "sits", "quietly", "near", "the", "old", "gate", "."),
    ("the", "{color}", "{animal}", "walks", "slowly", "past", "the", "tall", "hedge", "."),
    ("one", "{color}", "{animal}", "rests", "calmly", "beside", "the", "iron", "lamp", "."),
    ("some", "{color}", "{animal}", "stands", "proudly", "upon", "the", "worn", "step", "."),
    ("that", "{color}", "{animal}", "waits", "patiently", "behind", "the", "big", "shed", "."),
)

TARGET_SUFFIX_TOKEN = "end_t"
_SPLIT_IDS = {"train": 0, "valid": 1, "test": 2}


@dataclass(frozen=True)
class SynthConfig:
    n_attributes: int = 6
    n_examples: int = 1000
    n_valid: int = 200
    n_test: int = 200
    distractor_objects_per_image: int = 2
    d_obj: int = 64
    noise_std: float = 0.0
    seed: int = 0
    n_label_variants: int = 32
    # Fraction of each distractor feature replaced by a random mixture of
    # true-concept prototypes (shared visual statistics).  At 0 distractor
    # features are pure background prototypes and trivially separable; higher
    # values make discounting them genuinely hard to learn from the
    # translation loss alone while label-based relevance detection still
    # filters them.
    distractor_feature_overlap: float = 0.0

    def __post_init__(self) -> None:
        if not (1 <= self.n_attributes <= len(COLOR_WORDS)):
            raise ValueError(f"n_attributes must be in 1..{len(COLOR_WORDS)}")
        if self.n_examples < 1:
            raise ValueError("n_examples must be >= 1")
        if self.n_valid < 0 or self.n_test < 0:
            raise ValueError("split sizes must be >= 0")
        if not (0 <= self.distractor_objects_per_image <= len(BACKGROUND_WORDS)):
            raise ValueError(
                f"distractor_objects_per_image must be in 0..{len(BACKGROUND_WORDS)}"
            )
        n_concepts = 2 * self.n_attributes + len(BACKGROUND_WORDS)
        if self.d_obj < n_concepts:
            raise ValueError(f"d_obj must be >= {n_concepts} to fit the concept prototypes")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n_label_variants < 1:
            raise ValueError("n_label_variants must be >= 1")
        if not (0.0 <= self.distractor_feature_overlap <= 1.0):
            raise ValueError("distractor_feature_overlap must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        return cls(**doc)


@dataclass
class SplitData:
    standard: list[CorpusRecord]
    degraded: list[CorpusRecord]
    features: np.ndarray


@dataclass
class SynthBenchmark:
    config: SynthConfig
    splits: dict[str, SplitData]
    embeddings: dict[str, np.ndarray]
    target_map: dict[str, str]


def _orthonormal_rows(n_rows: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded random orthonormal row set (QR with a fixed sign convention)."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    return q[:n_rows].copy()


def _source_words() -> list[str]:
    words: list[str] = []
    for template in TEMPLATES:
        for tok in template:
            if not tok.startswith("{") and tok not in words:
                words.append(tok)
    return words


def build_target_map(config: SynthConfig) -> dict[str, str]:
    """Fixed bijection source word -> target token: a seeded permutation of
    the source word list, suffix-marked to keep the string spaces disjoint."""
    words = _source_words() + list(COLOR_WORDS[: config.n_attributes]) + list(
        ANIMAL_WORDS[: config.n_attributes]
    )
    rng = np.random.default_rng([config.seed, 3])
    shuffled = [words[i] for i in rng.permutation(len(words))]
    return {w: f"{s}_t" for w, s in zip(words, shuffled)}


def _build_embeddings(config: SynthConfig, target_map: dict[str, str]) -> dict[str, np.ndarray]:
    colors = COLOR_WORDS[: config.n_attributes]
    animals = ANIMAL_WORDS[: config.n_attributes]
    fillers = _source_words()
    tags = ["[color]", "[animals]"]
    base_words = fillers + list(colors) + list(animals) + list(BACKGROUND_WORDS) + tags
    base_words.append(TARGET_SUFFIX_TOKEN)
    dim = len(base_words)
    protos = _orthonormal_rows(dim, dim, np.random.default_rng([config.seed, 8]))
    vectors = {w: protos[i] for i, w in enumerate(base_words)}
    # Translation pairs share a vector, like a multilingual provider would.
    for src_word, tgt_token in target_map.items():
        vectors[tgt_token] = vectors[src_word]
    concepts = list(colors) + list(animals) + list(BACKGROUND_WORDS)
    for ci, word in enumerate(concepts):
        for k in range(config.n_label_variants):
            noise_rng = np.random.default_rng([config.seed, 101, ci, k])
            vectors[f"{word}~{k}"] = (
                vectors[word] + config.noise_std * noise_rng.standard_normal(dim)
            )
    return vectors


def _feature_prototypes(config: SynthConfig) -> dict[str, np.ndarray]:
    colors = COLOR_WORDS[: config.n_attributes]
    animals = ANIMAL_WORDS[: config.n_attributes]
    concepts = list(colors) + list(animals) + list(BACKGROUND_WORDS)
    protos = _orthonormal_rows(
        len(concepts), config.d_obj, np.random.default_rng([config.seed, 7])
    )
    return {word: protos[i] for i, word in enumerate(concepts)}


def _generate_split(
    config: SynthConfig,
    split: str,
    n_examples: int,
    feat_protos: dict[str, np.ndarray],
    target_map: dict[str, str],
) -> SplitData:
    colors = COLOR_WORDS[: config.n_attributes]
    animals = ANIMAL_WORDS[: config.n_attributes]
    concept_protos = np.stack([feat_protos[w] for w in colors + animals])
    standard: list[CorpusRecord] = []
    degraded: list[CorpusRecord] = []
    rows: list[np.ndarray] = []
    for idx in range(n_examples):
        rng = np.random.default_rng([config.seed, 17, _SPLIT_IDS[split], idx])
        template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        color = colors[int(rng.integers(len(colors)))]
        animal = animals[int(rng.integers(len(animals)))]
        tokens = [t.format(color=color, animal=animal) for t in template]
        spans = [EntitySpan(1, 2, "color"), EntitySpan(2, 3, "animals")]
        target = [target_map[w] for w in tokens] + [TARGET_SUFFIX_TOKEN]

        mentioned = [(color, True), (animal, True)]
        n_distract = config.distractor_objects_per_image
        picks = rng.choice(len(BACKGROUND_WORDS), size=n_distract, replace=False)
        mentioned += [(BACKGROUND_WORDS[int(i)], False) for i in picks]
        order = rng.permutation(len(mentioned))

        feats = np.zeros((len(mentioned), config.d_obj), dtype=np.float32)
        labels: list[str] = []
        confidences = np.zeros(len(mentioned), dtype=np.float32)
        is_true: list[bool] = []
        for row, oi in enumerate(order):
            word, truth = mentioned[oi]
            base = feat_protos[word]
            overlap = config.distractor_feature_overlap
            if not truth and overlap > 0.0:
                weights = rng.dirichlet(np.full(len(concept_protos), 0.5))
                mix = weights @ concept_protos
                mix /= np.linalg.norm(mix)
                base = (1.0 - overlap) * base + overlap * mix
                base = base / np.linalg.norm(base)
            noise = config.noise_std * rng.standard_normal(config.d_obj)
            feats[row] = base + noise
            labels.append(f"{word}~{int(rng.integers(config.n_label_variants))}")
            confidences[row] = (
                0.75 + 0.25 * rng.random() if truth else 0.4 + 0.5 * rng.random()
            )
            is_true.append(truth)

        start = len(rows)
        rows.extend(feats)
        ref = FeatureRef(path=f"objects.{split}.bin", start=start, end=start + len(mentioned))
        objects = ObjectSet(feats, labels, confidences)
        standard.append(
            CorpusRecord(
                source_tokens=tokens,
                target_tokens=target,
                entity_spans=spans,
                objects=objects,
                feature_ref=ref,
                object_is_true=is_true,
            )
        )
        deg_tokens, deg_spans = degrade_token_strings(tokens, spans)
        degraded.append(
            CorpusRecord(
                source_tokens=deg_tokens,
                target_tokens=list(target),
                entity_spans=deg_spans,
                objects=objects,
                feature_ref=ref,
                degraded=True,
                source_orig_tokens=tokens,
                object_is_true=is_true,
            )
        )
    features = (
        np.stack(rows) if rows else np.zeros((0, config.d_obj), dtype=np.float32)
    )
    return SplitData(standard, degraded, features)


def generate(config: SynthConfig) -> SynthBenchmark:
    """Generate train/valid/test splits, their object features, and the
    benchmark's embedding table.  Byte-identical output for a given config."""
    target_map = build_target_map(config)
    feat_protos = _feature_prototypes(config)
    sizes = {"train": config.n_examples, "valid": config.n_valid, "test": config.n_test}
    splits = {
        name: _generate_split(config, name, n, feat_protos, target_map)
        for name, n in sizes.items()
        if n > 0
    }
    return SynthBenchmark(config, splits, _build_embeddings(config, target_map), target_map)


def write_benchmark(bench: SynthBenchmark, out_dir: str | Path) -> dict:
    """Write corpora, feature files, the embeddings table, and a manifest.
    Returns the manifest document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for name, split in bench.splits.items():
        feat_path = out_dir / f"objects.{name}.bin"
        write_feature_file(feat_path, split.features)
        written.append(feat_path)
        std_path = out_dir / f"{name}.jsonl"
        deg_path = out_dir / f"{name}.degraded.jsonl"
        write_corpus(std_path, split.standard)
        write_corpus(deg_path, split.degraded)
        written.extend([std_path, deg_path])
    emb_path = out_dir / "embeddings.tsv"
    write_embeddings_file(emb_path, bench.embeddings)
    written.append(emb_path)
    manifest = {
        "config": bench.config.to_dict(),
        "target_map": bench.target_map,
        "target_suffix_token": TARGET_SUFFIX_TOKEN,
        "files": {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(written)
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return manifest


def masked_positions(record: CorpusRecord) -> list[int]:
    """Target positions that degradation made unrecoverable from text alone
    (the degraded spans; source and target are position-aligned here)."""
    return [
        span.start
        for span in record.entity_spans
        if span.category != "notvisual"
    ]


def relevance_accuracy(records: list[CorpusRecord]) -> dict[str, float]:
    """How well detected relevance matches the generator's ground truth."""
    true_hit = true_n = distract_hit = distract_n = 0
    for rec in records:
        if rec.relevance is None or rec.object_is_true is None:
            raise ValueError("records must be preprocessed and carry ground truth")
        for flag, truth in zip(rec.relevance.d, rec.object_is_true):
            if truth:
                true_n += 1
                true_hit += int(flag == 1)
            else:
                distract_n += 1
                distract_hit += int(flag == 0)
    overall = (true_hit + distract_hit) / max(1, true_n + distract_n)
    return {
        "overall": overall,
        "true_recall": true_hit / max(1, true_n),
        "distractor_specificity": distract_hit / max(1, distract_n),
    }
