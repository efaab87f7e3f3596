"""Record encoding and padded batch construction.

Batches pad sources, targets, and object sets to the batch maximum; padding
positions are excluded from attention, pooling, and losses, so per-example
results do not depend on how the corpus was split into batches (up to
floating-point reduction order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import CorpusRecord
from .losses import hard_mask
from .model import Batch
from .types import ObjectSet
from .vocab import EOS, PAD, SOS, Vocabulary, encode_token_list


@dataclass
class EncodedExample:
    src_ids: list[int]
    tgt_ids: list[int]  # gold target ids ending with eos
    objects: ObjectSet | None
    d: np.ndarray | None  # per-object relevance indicators
    q: np.ndarray | None  # per-target-token vision weights incl. 0 for eos
    record: CorpusRecord

    @property
    def src_len(self) -> int:
        return len(self.src_ids)


def encode_records(
    records: list[CorpusRecord],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    hard_masking: bool = False,
) -> list[EncodedExample]:
    """Map corpus records to id space; with ``hard_masking`` every object
    whose relevance indicator is 0 is masked up front (train and inference).
    """
    out = []
    for rec in records:
        if not rec.source_tokens:
            raise ValueError("empty source sentence in corpus")
        objects = rec.objects
        d = rec.relevance.d if rec.relevance is not None else None
        if hard_masking:
            if objects is None or d is None:
                raise ValueError("hard masking requires preprocessed relevance indicators")
            objects = hard_mask(objects, d)
        q = None
        if rec.vision is not None:
            q = np.concatenate([rec.vision.q, [0.0]])  # eos carries no vision weight
        out.append(
            EncodedExample(
                src_ids=encode_token_list(rec.source_tokens, src_vocab),
                tgt_ids=encode_token_list(rec.target_tokens, tgt_vocab) + [EOS],
                objects=objects,
                d=np.asarray(d) if d is not None else None,
                q=q,
                record=rec,
            )
        )
    return out


def collate(examples: list[EncodedExample], d_obj: int, dtype: torch.dtype = torch.float32) -> Batch:
    bsz = len(examples)
    if bsz == 0:
        raise ValueError("cannot collate an empty batch")
    n = max(ex.src_len for ex in examples)
    r = max(len(ex.tgt_ids) for ex in examples)
    m = max((len(ex.objects) if ex.objects is not None else 0) for ex in examples)
    src = torch.full((bsz, n), PAD, dtype=torch.long)
    tgt_in = torch.full((bsz, r), PAD, dtype=torch.long)
    tgt_out = torch.full((bsz, r), PAD, dtype=torch.long)
    src_len = torch.zeros(bsz, dtype=torch.long)
    tgt_len = torch.zeros(bsz, dtype=torch.long)
    obj_feats = torch.zeros((bsz, max(m, 1), d_obj), dtype=dtype)
    obj_valid = torch.zeros((bsz, max(m, 1)), dtype=torch.bool)
    has_q = any(ex.q is not None for ex in examples)
    q = torch.zeros((bsz, r), dtype=dtype) if has_q else None
    ds: list[np.ndarray] = []
    for i, ex in enumerate(examples):
        src[i, : ex.src_len] = torch.as_tensor(ex.src_ids, dtype=torch.long)
        src_len[i] = ex.src_len
        ri = len(ex.tgt_ids)
        tgt_in[i, 0] = SOS
        if ri > 1:
            tgt_in[i, 1:ri] = torch.as_tensor(ex.tgt_ids[:-1], dtype=torch.long)
        tgt_out[i, :ri] = torch.as_tensor(ex.tgt_ids, dtype=torch.long)
        tgt_len[i] = ri
        if ex.objects is not None and len(ex.objects) > 0:
            feats = ex.objects.effective_features()
            obj_feats[i, : len(ex.objects)] = torch.as_tensor(feats, dtype=dtype)
            obj_valid[i, : len(ex.objects)] = True
        if q is not None and ex.q is not None:
            q[i, : len(ex.q)] = torch.as_tensor(ex.q, dtype=dtype)
        ds.append(ex.d if ex.d is not None else np.zeros(0, dtype=np.int64))
    return Batch(
        src=src,
        src_len=src_len,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_len=tgt_len,
        obj_feats=obj_feats,
        obj_valid=obj_valid,
        q=q,
        d=ds,
    )


def epoch_batches(
    examples: list[EncodedExample],
    batch_size: int,
    rng: np.random.Generator,
) -> list[list[EncodedExample]]:
    """Shuffled epoch plan: permute examples, bucket by source length so pads
    stay short, then shuffle the batch order.  Every example appears exactly
    once."""
    order = rng.permutation(len(examples))
    by_len = sorted(order.tolist(), key=lambda i: (examples[i].src_len,))
    batches = [
        [examples[i] for i in by_len[k : k + batch_size]]
        for k in range(0, len(by_len), batch_size)
    ]
    rng.shuffle(batches)
    return batches


def sequential_batches(
    examples: list[EncodedExample], batch_size: int
) -> list[list[EncodedExample]]:
    return [examples[k : k + batch_size] for k in range(0, len(examples), batch_size)]
