"""Finite-difference verification of the combined objective's gradients.

Runs a micro configuration in float64, computes backward-pass gradients of
the total loss with mask samples and vision weights frozen, and compares
every parameter coordinate against central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .losses import MaskSample, compute_loss_bundle, sample_mask_sets
from .model import Batch, GroundedTranslator, ModelConfig
from .vocab import EOS, SOS

# Relative error uses a floor so coordinates whose true gradient is zero
# compare finite-difference noise against the floor, not against 0/0.
_REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    n_params: int
    loss: float
    runtime_s: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-3


def micro_setup(
    seed: int = 0,
    d_word: int = 4,
    d_hidden: int = 8,
    n_heads: int = 2,
    vocab: int = 11,
    n: int = 3,
    m: int = 2,
    d_obj: int = 6,
) -> tuple[GroundedTranslator, Batch, list[MaskSample]]:
    """Tiny float64 model plus one fixed example with frozen mask samples."""
    cfg = ModelConfig(
        src_vocab_size=vocab,
        tgt_vocab_size=vocab,
        d_word=d_word,
        d_hidden=d_hidden,
        n_heads=n_heads,
        d_obj=d_obj,
        variant="object_level",
        seed=seed,
    )
    model = GroundedTranslator(cfg).double()
    rng = np.random.default_rng([seed, 23])
    src = rng.integers(4, vocab, size=n)
    tgt = list(rng.integers(4, vocab, size=n - 1)) + [EOS]
    r = len(tgt)
    q = rng.random(r) + 0.1
    q = q / q.sum()
    batch = Batch(
        src=torch.as_tensor(src[None, :], dtype=torch.long),
        src_len=torch.tensor([n]),
        tgt_in=torch.as_tensor([[SOS] + tgt[:-1]], dtype=torch.long),
        tgt_out=torch.as_tensor([tgt], dtype=torch.long),
        tgt_len=torch.tensor([r]),
        obj_feats=torch.as_tensor(rng.standard_normal((1, m, d_obj))),
        obj_valid=torch.ones((1, m), dtype=torch.bool),
        q=torch.as_tensor(q[None, :]),
        d=None,
    )
    d = np.zeros(m, dtype=np.int64)
    d[: max(1, m // 2)] = 1
    sample_rng = np.random.default_rng([seed, 29])
    samples = [sample_mask_sets(d, sample_rng)]
    return model, batch, samples


def gradient_check(
    seed: int = 0,
    alpha: float = 0.1,
    beta: float = 0.1,
    h: float = 1e-5,
    **setup_kwargs,
) -> GradCheckResult:
    start = time.perf_counter()
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # tiny tensors; thread fan-out only adds overhead
    try:
        return _gradient_check(seed, alpha, beta, h, start, **setup_kwargs)
    finally:
        torch.set_num_threads(n_threads)


def _gradient_check(
    seed: int, alpha: float, beta: float, h: float, start: float, **setup_kwargs
) -> GradCheckResult:
    model, batch, samples = micro_setup(seed, **setup_kwargs)

    def loss_value() -> torch.Tensor:
        bundle = compute_loss_bundle(
            model, batch, alpha=alpha, beta=beta, mask_samples=samples
        )
        return bundle.total

    model.zero_grad()
    loss = loss_value()
    loss.backward()

    max_rel = 0.0
    worst = ""
    n_params = 0
    with torch.no_grad():
        for name, param in model.named_parameters():
            grad = param.grad
            analytic = (
                grad.reshape(-1).clone() if grad is not None else torch.zeros(param.numel())
            )
            flat = param.reshape(-1)
            n_params += flat.numel()
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_value().item()
                flat[i] = orig - h
                down = loss_value().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                ga = analytic[i].item()
                rel = abs(ga - fd) / max(_REL_FLOOR, abs(ga), abs(fd))
                if rel > max_rel:
                    max_rel = rel
                    worst = f"{name}[{i}]"
    return GradCheckResult(
        max_rel_err=max_rel,
        worst_param=worst,
        n_params=n_params,
        loss=float(loss.detach()),
        runtime_s=time.perf_counter() - start,
    )
