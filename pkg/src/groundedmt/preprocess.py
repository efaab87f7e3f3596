"""Corpus preprocessing: source degradation, object-relevance detection, and
target-side vision weights.

All similarity profiles are computed against the pre-degradation source
tokens when those are available, since degraded text replaces exactly the
words the similarities are supposed to find.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusRecord
from .embeddings import EmbeddingProvider
from .types import EntitySpan, RelevanceProfile, SourceSentence, VisionWeights, category_tag
from .vocab import Vocabulary

DEFAULT_GAMMA = 0.48


def cosine_matrix(row_embeds: Sequence[np.ndarray], col_embeds: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarity; entry (i, j) is cos(rows[i], cols[j])."""
    rows = np.asarray(row_embeds, dtype=np.float64)
    cols = np.asarray(col_embeds, dtype=np.float64)
    if rows.ndim != 2 or cols.ndim != 2 or rows.shape[1] != cols.shape[1]:
        raise ValueError("row and column embeddings must share one dimension")
    row_norms = np.linalg.norm(rows, axis=1)
    col_norms = np.linalg.norm(cols, axis=1)
    for name, norms in (("row", row_norms), ("column", col_norms)):
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise ValueError(f"{name} vector {bad[0]} has zero norm")
    sim = (rows / row_norms[:, None]) @ (cols / col_norms[:, None]).T
    return np.clip(sim, -1.0, 1.0)


def object_sentence_similarity(similarity: np.ndarray) -> np.ndarray:
    """Max-pool each object's row of the similarity matrix."""
    similarity = np.asarray(similarity, dtype=np.float64)
    if similarity.ndim != 2 or similarity.size == 0:
        raise ValueError("similarity matrix must be non-empty and 2-D")
    return similarity.max(axis=1)


def relevance_indicator(oss: np.ndarray, gamma: float) -> np.ndarray:
    """Binary source-relevance per object: 1 iff oss > gamma (strict)."""
    if not np.isfinite(gamma):
        raise ValueError("gamma must be finite")
    return (np.asarray(oss, dtype=np.float64) > gamma).astype(np.int64)


def object_phrase_embedding(phrase: str, provider: EmbeddingProvider) -> np.ndarray:
    """Embed a (possibly multiword) category phrase as the mean word vector."""
    words = phrase.split()
    if not words:
        raise ValueError("empty category phrase")
    return np.mean([provider.lookup(w) for w in words], axis=0)


def vision_weights(similarity: np.ndarray, freqs: Sequence[float]) -> VisionWeights:
    """Frequency-debiased target-token weights from a target-to-source
    similarity matrix whose non-vision-related columns are already zeroed.

    Negative row maxima are clamped to zero (a token whose best match is
    negative is treated as vision-unrelated).  When every weight vanishes the
    fallback is uniform 1/r.
    """
    similarity = np.asarray(similarity, dtype=np.float64)
    if similarity.ndim != 2 or similarity.shape[0] == 0:
        raise ValueError("similarity matrix must have at least one target row")
    freqs = np.asarray(freqs, dtype=np.float64)
    r = similarity.shape[0]
    if freqs.shape != (r,):
        raise ValueError("one frequency per target token required")
    if np.any(freqs < 1.0):
        raise ValueError("frequencies must be >= 1")
    tvs = np.maximum(similarity.max(axis=1), 0.0)
    raw = tvs / freqs
    total = raw.sum()
    if total > 0.0:
        q = raw / total
    else:
        q = np.full(r, 1.0 / r)
    return VisionWeights(similarity, tvs, q)


def degrade_sentence(sentence: SourceSentence, vocab: Vocabulary) -> SourceSentence:
    """Replace every visual entity span with its single category tag token.

    notvisual spans are left untouched.  Degrading an already degraded
    sentence is a no-op because tag spans map to themselves.
    """
    spans = sorted(sentence.entity_spans, key=lambda s: s.start)
    out_tokens: list[int] = []
    out_spans: list[EntitySpan] = []
    cursor = 0
    for span in spans:
        out_tokens.extend(sentence.tokens[cursor : span.start])
        if span.category == "notvisual":
            start = len(out_tokens)
            out_tokens.extend(sentence.tokens[span.start : span.end])
            out_spans.append(EntitySpan(start, len(out_tokens), span.category))
        else:
            tag = category_tag(span.category)
            if tag not in vocab:
                raise ValueError(f"category tag {tag!r} missing from vocabulary")
            start = len(out_tokens)
            out_tokens.append(vocab.id(tag))
            out_spans.append(EntitySpan(start, start + 1, span.category))
        cursor = span.end
    out_tokens.extend(sentence.tokens[cursor:])
    return SourceSentence(tuple(out_tokens), tuple(out_spans), degraded=True)


def degrade_token_strings(
    tokens: Sequence[str], spans: Sequence[EntitySpan]
) -> tuple[list[str], list[EntitySpan]]:
    """String-level rendition of degrade_sentence, for corpus construction."""
    spans = sorted(spans, key=lambda s: s.start)
    out_tokens: list[str] = []
    out_spans: list[EntitySpan] = []
    cursor = 0
    for span in spans:
        out_tokens.extend(tokens[cursor : span.start])
        start = len(out_tokens)
        if span.category == "notvisual":
            out_tokens.extend(tokens[span.start : span.end])
        else:
            out_tokens.append(category_tag(span.category))
        out_spans.append(EntitySpan(start, len(out_tokens), span.category))
        cursor = span.end
    out_tokens.extend(tokens[cursor:])
    return out_tokens, out_spans


@dataclass(frozen=True)
class DegradationStats:
    masked_fraction: float
    masked_by_category: dict[str, int]
    masked_tokens: int
    total_tokens: int


def degradation_stats(corpus: Iterable[SourceSentence | CorpusRecord]) -> DegradationStats:
    """Fraction of tokens that degradation masks, measured on the original
    corpus: every token inside a non-notvisual span counts as masked."""
    masked = 0
    total = 0
    by_category: Counter[str] = Counter()
    for item in corpus:
        if isinstance(item, CorpusRecord):
            tokens, spans = item.similarity_source_tokens(), item.entity_spans
        else:
            tokens, spans = item.tokens, item.entity_spans
        total += len(tokens)
        for span in spans:
            if span.category != "notvisual":
                width = span.end - span.start
                masked += width
                by_category[span.category] += width
    fraction = masked / total if total else 0.0
    return DegradationStats(fraction, dict(by_category), masked, total)


def _vision_flags_for(rec: CorpusRecord, n: int) -> np.ndarray:
    """Vision-related flags aligned to the similarity source tokens."""
    if rec.source_orig_tokens is not None and len(rec.source_orig_tokens) != len(rec.source_tokens):
        raise ValueError(
            "cannot align entity spans to source_orig_tokens of different length"
        )
    flags = np.zeros(n, dtype=bool)
    for span in rec.entity_spans:
        if span.category != "notvisual":
            flags[span.start : span.end] = True
    return flags


def target_frequency_table(records: Iterable[CorpusRecord]) -> dict[str, int]:
    counts: Counter[str] = Counter()
    for rec in records:
        counts.update(rec.target_tokens)
    return dict(counts)


def preprocess_records(
    records: list[CorpusRecord],
    provider: EmbeddingProvider,
    gamma: float = DEFAULT_GAMMA,
    target_freqs: dict[str, int] | None = None,
) -> list[CorpusRecord]:
    """Attach relevance profiles and vision weights to every record.

    ``target_freqs`` should be the training-corpus target token counts; when
    omitted it is computed from ``records`` themselves.
    """
    if target_freqs is None:
        target_freqs = target_frequency_table(records)
    for rec in records:
        sim_tokens = rec.similarity_source_tokens()
        if not sim_tokens:
            raise ValueError("cannot preprocess an example with an empty source")
        src_vecs = [provider.lookup(t) for t in sim_tokens]
        if rec.objects is not None and len(rec.objects) > 0:
            obj_vecs = [object_phrase_embedding(c, provider) for c in rec.objects.categories]
            sim = cosine_matrix(obj_vecs, src_vecs)
            oss = object_sentence_similarity(sim)
            rec.relevance = RelevanceProfile(sim, oss, relevance_indicator(oss, gamma), gamma)
        tgt_vecs = [provider.lookup(t) for t in rec.target_tokens]
        sim_t = cosine_matrix(tgt_vecs, src_vecs)
        sim_t[:, ~_vision_flags_for(rec, len(sim_tokens))] = 0.0
        freqs = [max(1, target_freqs.get(t, 1)) for t in rec.target_tokens]
        rec.vision = vision_weights(sim_t, freqs)
    return records
