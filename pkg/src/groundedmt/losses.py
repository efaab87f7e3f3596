"""Training objectives.

The combined per-example objective is

    total = (base + rel_masked + irrel_masked) / 3
            + alpha * masking + beta * vision

where ``base`` is the teacher-forced cross-entropy with all objects visible,
``rel_masked`` / ``irrel_masked`` are the same loss recomputed with a sampled
subset of source-relevant / source-irrelevant objects zeroed out,
``masking = -(rel_masked - base) + (irrel_masked - base)^2`` rewards masking
irrelevant objects while penalizing masking relevant ones, and ``vision`` is
the cross-entropy reweighted by the per-token vision weights q.

Per-token losses are mean-reduced over target length before entering any of
the formulas, and one (relevant, irrelevant) sample pair is drawn per example
per step; an empty sample class makes the corresponding loss equal ``base``
by definition.  Gradients flow through all three forward passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .model import Batch, GroundedTranslator
from .types import ObjectSet


@dataclass(frozen=True)
class MaskSample:
    """Object indices chosen for the masked passes.  Each set is homogeneous:
    relevant indices only in ``relevant``, irrelevant only in ``irrelevant``;
    mixed sets are never sampled."""

    relevant: tuple[int, ...] = ()
    irrelevant: tuple[int, ...] = ()


def sample_mask_sets(d: np.ndarray, rng: np.random.Generator) -> MaskSample:
    """Draw one homogeneous non-empty subset per relevance class.

    The subset size k is uniform on {1..|class|} and the members are a
    uniform without-replacement draw; an empty class yields an empty set.
    """
    d = np.asarray(d)

    def pick(pool: np.ndarray) -> tuple[int, ...]:
        if pool.size == 0:
            return ()
        k = int(rng.integers(1, pool.size + 1))
        chosen = rng.choice(pool, size=k, replace=False)
        return tuple(sorted(int(i) for i in chosen))

    return MaskSample(pick(np.flatnonzero(d == 1)), pick(np.flatnonzero(d == 0)))


def hard_mask(objects: ObjectSet, d: np.ndarray) -> ObjectSet:
    """Copy of the object set with every object whose indicator is 0 masked
    (already-masked objects stay masked)."""
    d = np.asarray(d)
    if d.shape != (len(objects),):
        raise ValueError("one relevance indicator per object required")
    return objects.with_masked(objects.masked | (d == 0))


def object_masking_loss(base, rel_masked, irrel_masked):
    """-(rel_masked - base) + (irrel_masked - base)^2; may be negative."""
    return -(rel_masked - base) + (irrel_masked - base) ** 2


def vision_weighted_loss(per_token_nll, q):
    """Weighted sum of per-token losses; q must be the same length."""
    per_token_nll = torch.as_tensor(per_token_nll)
    q = torch.as_tensor(q, dtype=per_token_nll.dtype)
    if per_token_nll.shape != q.shape:
        raise ValueError(
            f"need one weight per token, got {tuple(q.shape)} vs {tuple(per_token_nll.shape)}"
        )
    return (per_token_nll * q).sum()


def total_loss(base, rel_masked, irrel_masked, masking, vision, alpha: float, beta: float):
    """Combined objective; alpha and beta gate the two auxiliary terms."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be >= 0")
    return (base + rel_masked + irrel_masked) / 3 + alpha * masking + beta * vision


def masked_pass_losses(
    model: GroundedTranslator,
    batch: Batch,
    samples: list[MaskSample],
    base: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Per-example losses with the sampled relevant / irrelevant objects
    zeroed out.  Examples whose sample class is empty take their base loss
    unchanged (same tensor, so no spurious gradient terms appear).
    """
    if len(samples) != len(batch):
        raise ValueError("one mask sample per example required")
    if base is None:
        base, _, _ = model.per_example_nll(batch)

    def pass_for(index_sets: list[tuple[int, ...]]) -> Tensor:
        if not any(index_sets):
            return base
        feats = batch.obj_feats.clone()
        for i, idx in enumerate(index_sets):
            if idx:
                feats[i, list(idx)] = 0.0
        per_example, _, _ = model.per_example_nll(batch, obj_feats_override=feats)
        has_set = torch.tensor(
            [bool(idx) for idx in index_sets], device=per_example.device
        )
        return torch.where(has_set, per_example, base)

    rel = pass_for([s.relevant for s in samples])
    irr = pass_for([s.irrelevant for s in samples])
    return rel, irr


@dataclass
class LossBundle:
    """Batch-mean loss terms (0-dim tensors) plus the per-example vectors and
    the mask samples that produced them."""

    base: Tensor
    rel_masked: Tensor
    irrel_masked: Tensor
    masking: Tensor
    vision: Tensor
    total: Tensor
    mask_samples: list[MaskSample]
    per_example_total: Tensor

    def scalars(self) -> dict[str, float]:
        return {
            "L_o": float(self.base.detach()),
            "L_r": float(self.rel_masked.detach()),
            "L_ir": float(self.irrel_masked.detach()),
            "L_m": float(self.masking.detach()),
            "L_v": float(self.vision.detach()),
            "L_ovc": float(self.total.detach()),
        }


def compute_loss_bundle(
    model: GroundedTranslator,
    batch: Batch,
    alpha: float,
    beta: float,
    rng: np.random.Generator | None = None,
    sample_masks: bool | None = None,
    mask_samples: list[MaskSample] | None = None,
) -> LossBundle:
    """Run the (up to) three forward passes for one batch and assemble the
    combined objective.

    ``sample_masks`` defaults to ``alpha > 0``.  With sampling off and
    alpha == beta == 0 the total is literally the base cross-entropy tensor,
    so an optimizer step matches a plain cross-entropy step bit for bit.
    """
    if sample_masks is None:
        sample_masks = alpha > 0
    base_vec, nll, _ = model.per_example_nll(batch)

    if mask_samples is not None:
        samples = mask_samples
    elif sample_masks:
        if batch.d is None:
            raise ValueError("mask sampling requires relevance indicators on the batch")
        if rng is None:
            raise ValueError("mask sampling requires an rng")
        samples = [sample_mask_sets(d_i, rng) for d_i in batch.d]
    else:
        samples = [MaskSample() for _ in range(len(batch))]

    if any(s.relevant or s.irrelevant for s in samples):
        rel_vec, irr_vec = masked_pass_losses(model, batch, samples, base_vec)
    else:
        rel_vec, irr_vec = base_vec, base_vec

    masking_vec = object_masking_loss(base_vec, rel_vec, irr_vec)
    if batch.q is not None:
        vision_vec = (nll * batch.q.to(nll.dtype)).sum(dim=1)
    else:
        if beta > 0:
            raise ValueError("vision-weighted loss requires vision weights on the batch")
        vision_vec = torch.zeros_like(base_vec)

    plain = not sample_masks and rel_vec is base_vec and alpha == 0 and beta == 0
    if plain:
        per_example_total = base_vec
    else:
        per_example_total = total_loss(
            base_vec, rel_vec, irr_vec, masking_vec, vision_vec, alpha, beta
        )
    return LossBundle(
        base=base_vec.mean(),
        rel_masked=rel_vec.mean(),
        irrel_masked=irr_vec.mean(),
        masking=masking_vec.mean(),
        vision=vision_vec.mean(),
        total=per_example_total.mean(),
        mask_samples=samples,
        per_example_total=per_example_total,
    )
