"""Corpus BLEU, checkpoint evaluation, and object-attention export."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .batching import collate, encode_records, sequential_batches
from .checkpoint import Checkpoint
from .corpus import CorpusRecord
from .vocab import decode_ids


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    references: list[Sequence], hypotheses: list[Sequence], max_n: int = 4
) -> float:
    """Corpus-level BLEU in [0, 100]: geometric mean of modified n-gram
    precisions (n = 1..max_n) times the brevity penalty.

    Conventions, fixed for internal comparability: one reference per
    hypothesis; n-gram orders with no hypothesis n-grams anywhere in the
    corpus are dropped from the geometric mean; zero match counts for n >= 2
    are add-one smoothed; a zero unigram match count yields 0.0.
    """
    if not hypotheses:
        raise ValueError("empty hypothesis list")
    if len(references) != len(hypotheses):
        raise ValueError("need exactly one reference per hypothesis")
    matched = [0] * max_n
    total = [0] * max_n
    ref_len = 0
    hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            total[n - 1] += sum(hyp_counts.values())
            matched[n - 1] += sum(
                min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        if total[n - 1] == 0:
            continue
        m = matched[n - 1]
        if m == 0:
            if n == 1:
                return 0.0
            log_precisions.append(math.log((m + 1) / (total[n - 1] + 1)))
        else:
            log_precisions.append(math.log(m / total[n - 1]))
    if not log_precisions:
        return 0.0
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


@dataclass
class EvaluationResult:
    bleu: float
    hypotheses: list[list[str]]
    references: list[list[str]]


def decode_corpus(
    model,
    examples,
    batch_size: int = 64,
    max_len: int | None = None,
) -> list[list[int]]:
    """Greedy-decode encoded examples in corpus order."""
    out: list[list[int]] = []
    for chunk in sequential_batches(examples, batch_size):
        batch = collate(chunk, model.cfg.d_obj, dtype=model.dtype)
        limit = max_len if max_len is not None else 2 * int(batch.src_len.max()) + 8
        out.extend(
            model.greedy_decode(
                batch.src, batch.src_len, batch.obj_feats, batch.obj_valid, limit
            )
        )
    return out


def evaluate(
    ckpt: Checkpoint,
    records: list[CorpusRecord],
    batch_size: int = 64,
    max_len: int | None = None,
) -> EvaluationResult:
    """Greedy-decode every example and score corpus BLEU against the stored
    targets.  Hard masking is replayed at inference when the checkpoint was
    trained with it."""
    if not records:
        raise ValueError("empty evaluation dataset")
    total = sum(len(r.source_tokens) for r in records)
    oov = sum(1 for r in records for t in r.source_tokens if t not in ckpt.src_vocab)
    if total and oov / total > 0.5:
        raise ValueError(
            "vocabulary mismatch between checkpoint and dataset "
            f"({oov}/{total} source tokens unknown)"
        )
    hard_masking = bool((ckpt.train_config or {}).get("hard_masking", False))
    examples = encode_records(records, ckpt.src_vocab, ckpt.tgt_vocab, hard_masking=hard_masking)
    model = ckpt.build_model()
    hyp_ids = decode_corpus(model, examples, batch_size=batch_size, max_len=max_len)
    hypotheses = [decode_ids(ids, ckpt.tgt_vocab) for ids in hyp_ids]
    references = [list(r.target_tokens) for r in records]
    return EvaluationResult(corpus_bleu(references, hypotheses), hypotheses, references)


def write_decodes(path: str | Path, result: EvaluationResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for hyp in result.hypotheses:
            fh.write(" ".join(hyp) + "\n")


def masked_position_accuracy(
    hypotheses: list[list[str]],
    references: list[list[str]],
    positions: list[list[int]],
) -> float:
    """Fraction of masked positions whose hypothesis token equals the
    reference token; hypotheses too short to cover a position miss it."""
    hits = 0
    n = 0
    for hyp, ref, pos in zip(hypotheses, references, positions):
        for p in pos:
            n += 1
            if p < len(hyp) and p < len(ref) and hyp[p] == ref[p]:
                hits += 1
    if n == 0:
        raise ValueError("no masked positions to score")
    return hits / n


@dataclass
class AttentionDump:
    example_id: str
    source_tokens: list[str]
    object_categories: list[str]
    per_head: np.ndarray  # (heads, n, m)
    averaged: np.ndarray  # (n, m)


def dump_attention(ckpt: Checkpoint, record: CorpusRecord, example_id: str) -> AttentionDump:
    """Object-source attention matrices for one example, exactly as produced
    inside the encoder."""
    if ckpt.model_config.variant == "text_only":
        raise ValueError("no object attention in this variant")
    if record.objects is None or len(record.objects) == 0:
        raise ValueError("example has no objects")
    model = ckpt.build_model()
    hard_masking = bool((ckpt.train_config or {}).get("hard_masking", False))
    (example,) = encode_records([record], ckpt.src_vocab, ckpt.tgt_vocab, hard_masking=hard_masking)
    batch = collate([example], model.cfg.d_obj, dtype=model.dtype)
    with torch.no_grad():
        enc = model.encode(batch.src, batch.src_len, batch.obj_feats, batch.obj_valid)
    weights = enc.object_attention[0].cpu().numpy()  # (heads, n, m)
    return AttentionDump(
        example_id=example_id,
        source_tokens=list(record.source_tokens),
        object_categories=list(record.objects.categories),
        per_head=weights,
        averaged=weights.mean(axis=0),
    )


def write_attention_dump(path: str | Path, dump: AttentionDump) -> None:
    """Plot-ready tabular text: header lines, then per head block one row per
    source token of m tab-separated weights."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# example_id\t{dump.example_id}\n")
        fh.write("# source_tokens\t" + "\t".join(dump.source_tokens) + "\n")
        fh.write("# object_categories\t" + "\t".join(dump.object_categories) + "\n")
        blocks = [(str(h), dump.per_head[h]) for h in range(dump.per_head.shape[0])]
        blocks.append(("avg", dump.averaged))
        for name, matrix in blocks:
            fh.write(f"# head\t{name}\n")
            for row in matrix:
                fh.write("\t".join(repr(float(x)) for x in row) + "\n")
