"""Optimization loop: teacher forcing, plateau-driven learning rate,
early stopping on validation BLEU, and the standard / degraded / mixed
data settings.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .batching import collate, encode_records, epoch_batches
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import CorpusRecord
from .evaluation import corpus_bleu, decode_corpus
from .losses import compute_loss_bundle
from .model import GroundedTranslator, ModelConfig
from .vocab import Vocabulary, build_vocabulary, decode_ids

SETTINGS = ("standard", "degraded", "mixed")
LR_POLICIES = ("halve_on_plateau", "constant", "exponential")


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.48
    base_lr: float = 1e-3
    lr_policy: str = "halve_on_plateau"
    lr_decay: float = 0.5
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    setting: str = "standard"
    mix_ratio: float = 0.0
    grad_clip: float = 5.0
    hard_masking: bool = False
    sample_masks: bool | None = None  # None -> alpha > 0
    min_count: int = 1
    eval_batch_size: int = 64
    eval_max_len: int | None = None

    def __post_init__(self) -> None:
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if self.lr_policy not in LR_POLICIES:
            raise ValueError(f"lr_policy must be one of {LR_POLICIES}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.mix_ratio < 0:
            raise ValueError("mix_ratio must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")

    @property
    def effective_sample_masks(self) -> bool:
        return self.alpha > 0 if self.sample_masks is None else self.sample_masks


@dataclass
class LrPolicy:
    name: str
    base_lr: float
    decay: float = 0.5


def lr_schedule(step: int, policy: LrPolicy) -> float:
    """Learning rate for a policy-defined counter.

    halve_on_plateau: ``step`` counts evaluations without improvement, each
    halving the rate (one halving per evaluation event).  exponential:
    ``step`` counts evaluations, rate decays geometrically.  constant: fixed.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    if policy.name == "constant":
        return policy.base_lr
    if policy.name == "halve_on_plateau":
        return policy.base_lr * 0.5**step
    if policy.name == "exponential":
        return policy.base_lr * policy.decay**step
    raise ValueError(f"unknown lr policy {policy.name!r}")


def mix_datasets(
    standard: list[CorpusRecord],
    degraded: list[CorpusRecord],
    ratio: float,
    rng: np.random.Generator,
) -> list[CorpusRecord]:
    """All standard examples plus floor(ratio * |standard|) degraded examples
    drawn uniformly without replacement, shuffled together."""
    take = math.floor(ratio * len(standard))
    if take > len(degraded):
        raise ValueError(
            f"mix ratio {ratio} needs {take} degraded examples, only {len(degraded)} available"
        )
    picked = [degraded[i] for i in rng.choice(len(degraded), size=take, replace=False)]
    mixed = list(standard) + picked
    rng.shuffle(mixed)
    return mixed


def prepare_training_data(
    setting: str,
    standard: list[CorpusRecord],
    degraded: list[CorpusRecord] | None,
    mix_ratio: float,
    rng: np.random.Generator,
) -> list[CorpusRecord]:
    if setting == "standard":
        return list(standard)
    if degraded is None:
        raise ValueError(f"setting {setting!r} requires a degraded corpus")
    if setting == "degraded":
        return list(degraded)
    return mix_datasets(standard, degraded, mix_ratio, rng)


@dataclass
class TrainResult:
    best_bleu: float
    steps: int
    epochs: int
    checkpoint_path: Path
    log_path: Path
    metrics_path: Path
    history: list[dict] = field(default_factory=list)


def _check_finite(scalars: dict[str, float], step: int) -> None:
    for name, value in scalars.items():
        if not math.isfinite(value):
            raise RuntimeError(f"non-finite loss at step {step}: {name}={value}")


def build_vocabularies(
    records: list[CorpusRecord], min_count: int = 1
) -> tuple[Vocabulary, Vocabulary]:
    src_vocab = build_vocabulary([r.source_tokens for r in records], min_count)
    tgt_vocab = build_vocabulary([r.target_tokens for r in records], min_count)
    return src_vocab, tgt_vocab


def train_model(
    train_records: list[CorpusRecord],
    valid_records: list[CorpusRecord],
    cfg: TrainConfig,
    model_kwargs: dict,
    out_dir: str | Path,
) -> TrainResult:
    """Train on prepared records and keep the best-BLEU checkpoint.

    ``model_kwargs`` holds every ModelConfig field except the vocabulary
    sizes, which are derived from the training corpus here.
    """
    if not train_records or not valid_records:
        raise ValueError("training and validation datasets must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # Desk-scale models run markedly faster without intra-op thread fan-out.
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _train_model(train_records, valid_records, cfg, model_kwargs, out_dir)
    finally:
        torch.set_num_threads(n_threads)


def _train_model(
    train_records: list[CorpusRecord],
    valid_records: list[CorpusRecord],
    cfg: TrainConfig,
    model_kwargs: dict,
    out_dir: Path,
) -> TrainResult:

    src_vocab, tgt_vocab = build_vocabularies(train_records, cfg.min_count)
    model_cfg = ModelConfig(
        src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab), **model_kwargs
    )
    for rec in train_records:
        if rec.objects is not None and len(rec.objects) > 0:
            if rec.objects.feature_dim != model_cfg.d_obj:
                raise ValueError(
                    f"object feature dim {rec.objects.feature_dim} does not match "
                    f"configured d_obj {model_cfg.d_obj}"
                )
            break

    train_ex = encode_records(train_records, src_vocab, tgt_vocab, cfg.hard_masking)
    valid_ex = encode_records(valid_records, src_vocab, tgt_vocab, cfg.hard_masking)
    if cfg.effective_sample_masks:
        for ex in train_ex:
            if ex.d is None:
                raise ValueError(
                    "object-masking loss requires preprocessed relevance indicators"
                )
    if cfg.beta > 0:
        for ex in train_ex:
            if ex.q is None:
                raise ValueError("vision-weighted loss requires preprocessed vision weights")

    model = GroundedTranslator(model_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.base_lr)
    policy = LrPolicy(cfg.lr_policy, cfg.base_lr, cfg.lr_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 11])
    mask_rng = np.random.default_rng([cfg.seed, 13])

    valid_refs = [list(r.target_tokens) for r in valid_records]
    best_bleu = -math.inf
    bad_evals = 0
    lr = cfg.base_lr
    step = 0
    history: list[dict] = []
    ckpt_path = out_dir / "best.ckpt"
    log_path = out_dir / "train_log.jsonl"
    metrics_path = out_dir / "metrics.json"
    train_cfg_doc = asdict(cfg)

    epochs_run = 0
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(1, cfg.max_epochs + 1):
            epochs_run = epoch
            model.train()
            for chunk in epoch_batches(train_ex, cfg.batch_size, shuffle_rng):
                batch = collate(chunk, model_cfg.d_obj, dtype=model.dtype)
                bundle = compute_loss_bundle(
                    model,
                    batch,
                    alpha=cfg.alpha,
                    beta=cfg.beta,
                    rng=mask_rng,
                    sample_masks=cfg.effective_sample_masks,
                )
                scalars = bundle.scalars()
                _check_finite(scalars, step)
                optimizer.zero_grad()
                bundle.total.backward()
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                record = {
                    "step": step,
                    **scalars,
                    "lr": lr,
                    "n_relevant_masked": sum(len(s.relevant) for s in bundle.mask_samples),
                    "n_irrelevant_masked": sum(len(s.irrelevant) for s in bundle.mask_samples),
                }
                log.write(json.dumps(record, sort_keys=True) + "\n")
                step += 1

            model.eval()
            hyp_ids = decode_corpus(
                model, valid_ex, batch_size=cfg.eval_batch_size, max_len=cfg.eval_max_len
            )
            bleu = corpus_bleu(valid_refs, [decode_ids(h, tgt_vocab) for h in hyp_ids])
            improved = bleu > best_bleu
            if improved:
                best_bleu = bleu
                bad_evals = 0
                save_checkpoint(
                    ckpt_path,
                    model,
                    src_vocab,
                    tgt_vocab,
                    train_config=train_cfg_doc,
                    best_score=best_bleu,
                    step=step,
                )
            else:
                bad_evals += 1
                lr = lr_schedule(bad_evals, policy)
                for group in optimizer.param_groups:
                    group["lr"] = lr
            history.append(
                {"epoch": epoch, "bleu": bleu, "lr": lr, "improved": improved}
            )
            if bad_evals >= cfg.patience:
                break

    metrics = {
        "best_bleu": best_bleu,
        "steps": step,
        "epochs": epochs_run,
        "history": history,
    }
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
    return TrainResult(
        best_bleu=best_bleu,
        steps=step,
        epochs=epochs_run,
        checkpoint_path=ckpt_path,
        log_path=log_path,
        metrics_path=metrics_path,
        history=history,
    )


def reload_best(result: TrainResult):
    return load_checkpoint(result.checkpoint_path)
