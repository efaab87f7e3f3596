"""Command-line entry point wiring the whole pipeline:
synth-gen -> preprocess -> train -> evaluate -> dump-attention, plus the
finite-difference gradient check.

Exit codes: 0 success, 1 validation/runtime failure, 2 usage error.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .checkpoint import load_checkpoint
from .config import load_run_config, write_run_manifest
from .corpus import read_corpus, write_corpus
from .embeddings import FileEmbeddings, HashEmbeddings
from .evaluation import dump_attention, evaluate, write_attention_dump, write_decodes
from .gradcheck import gradient_check
from .preprocess import DEFAULT_GAMMA, preprocess_records, target_frequency_table
from .synthetic import SynthConfig, generate, write_benchmark
from .training import prepare_training_data, train_model


def _fail_on_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, RuntimeError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Grounded machine translation pipeline."""


@main.command("synth-gen")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@_fail_on_errors
def synth_gen(config_path: str | None, out_dir: str, seed: int | None) -> None:
    """Generate the synthetic grounded-translation benchmark."""
    doc = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    if seed is not None:
        doc["seed"] = seed
    allowed = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
    cfg = SynthConfig(**doc)
    bench = generate(cfg)
    manifest = write_benchmark(bench, out_dir)
    click.echo(f"wrote {len(manifest['files'])} files to {out_dir}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--gamma", type=float, default=DEFAULT_GAMMA, show_default=True)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False),
              help="Pretrained vector file (token TAB floats); hash embeddings otherwise.")
@click.option("--emb-dim", type=int, default=64, show_default=True,
              help="Hash-embedding dimension when no vector file is given.")
@click.option("--emb-seed", type=int, default=0, show_default=True)
@click.option("--freqs", "freqs_path", type=click.Path(exists=True, dir_okay=False),
              help="Target-frequency table (token TAB count); computed from the corpus otherwise.")
@click.option("--freqs-out", type=click.Path(dir_okay=False),
              help="Write the target-frequency table used (for preprocessing other splits).")
@click.option("--max-objects", type=int, default=20, show_default=True)
@_fail_on_errors
def preprocess(
    corpus_path: str,
    out_path: str,
    gamma: float,
    embeddings_path: str | None,
    emb_dim: int,
    emb_seed: int,
    freqs_path: str | None,
    freqs_out: str | None,
    max_objects: int,
) -> None:
    """Attach relevance profiles and vision weights to a corpus."""
    records = read_corpus(corpus_path, max_objects=max_objects)
    provider = (
        FileEmbeddings(embeddings_path, seed=emb_seed)
        if embeddings_path
        else HashEmbeddings(emb_dim, seed=emb_seed)
    )
    freqs = None
    if freqs_path:
        freqs = {}
        with open(freqs_path, encoding="utf-8") as fh:
            for line in fh:
                tok, _, cnt = line.rstrip("\n").partition("\t")
                freqs[tok] = int(cnt)
    else:
        freqs = target_frequency_table(records)
    preprocess_records(records, provider, gamma=gamma, target_freqs=freqs)
    write_corpus(out_path, records)
    if freqs_out:
        with open(freqs_out, "w", encoding="utf-8") as fh:
            for tok in sorted(freqs):
                fh.write(f"{tok}\t{freqs[tok]}\n")
    click.echo(f"preprocessed {len(records)} examples -> {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--setting", type=click.Choice(["standard", "degraded", "mixed"]), default=None,
              help="Override the config's data setting.")
@click.option("--mix-ratio", type=float, default=None, help="Override the config's mix ratio.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@_fail_on_errors
def train(config_path: str, setting: str | None, mix_ratio: float | None, out_dir: str) -> None:
    """Train a model and keep the best-validation-BLEU checkpoint."""
    cfg = load_run_config(config_path)
    if setting is not None:
        cfg.train = dataclasses.replace(cfg.train, setting=setting)
    if mix_ratio is not None:
        cfg.train = dataclasses.replace(cfg.train, mix_ratio=mix_ratio)
    if cfg.data.train is None or cfg.data.valid is None:
        raise ValueError("config data section must provide train and valid corpora")

    max_objects = cfg.model.get("max_objects", 20)
    standard = read_corpus(cfg.data.train, max_objects=max_objects)
    degraded = (
        read_corpus(cfg.data.train_degraded, max_objects=max_objects)
        if cfg.data.train_degraded
        else None
    )
    if cfg.train.setting == "degraded" and degraded is None:
        # data.train may already point at the degraded rendition
        degraded = standard
    valid_path = cfg.data.valid
    if cfg.train.setting in ("degraded", "mixed") and cfg.data.valid_degraded:
        valid_path = cfg.data.valid_degraded
    valid = read_corpus(valid_path, max_objects=max_objects)

    mix_rng = np.random.default_rng([cfg.train.seed, 5])
    train_records = prepare_training_data(
        cfg.train.setting, standard, degraded, cfg.train.mix_ratio, mix_rng
    )
    result = train_model(train_records, valid, cfg.train, cfg.model_kwargs(), out_dir)
    write_run_manifest(
        out_dir,
        {
            "model": cfg.model,
            "train": dataclasses.asdict(cfg.train),
            "data": dataclasses.asdict(cfg.data),
        },
        {"train": cfg.data.train, "train_degraded": cfg.data.train_degraded, "valid": valid_path},
        {
            "checkpoint": result.checkpoint_path,
            "log": result.log_path,
            "metrics": result.metrics_path,
        },
        {"train_seed": cfg.train.seed},
    )
    click.echo(
        f"best validation BLEU {result.best_bleu:.2f} after {result.epochs} epochs "
        f"({result.steps} steps); checkpoint at {result.checkpoint_path}"
    )


@main.command("evaluate")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--batch-size", type=int, default=64, show_default=True)
@_fail_on_errors
def evaluate_cmd(ckpt_path: str, data_path: str, out_dir: str, batch_size: int) -> None:
    """Greedy-decode a dataset and report corpus BLEU."""
    ckpt = load_checkpoint(ckpt_path)
    records = read_corpus(data_path, max_objects=ckpt.model_config.max_objects)
    result = evaluate(ckpt, records, batch_size=batch_size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_decodes(out / "decodes.txt", result)
    with open(out / "eval_metrics.json", "w", encoding="utf-8") as fh:
        json.dump({"bleu": result.bleu, "n_examples": len(records)}, fh, sort_keys=True, indent=2)
    write_run_manifest(
        out,
        {"checkpoint": ckpt_path, "batch_size": batch_size},
        {"data": data_path, "checkpoint": ckpt_path},
        {"decodes": out / "decodes.txt", "metrics": out / "eval_metrics.json"},
        {},
    )
    click.echo(f"BLEU {result.bleu:.2f} on {len(records)} examples")


@main.command("dump-attention")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--example-id", type=int, required=True, help="Zero-based corpus line index.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_fail_on_errors
def dump_attention_cmd(ckpt_path: str, data_path: str, example_id: int, out_path: str) -> None:
    """Export the object-source attention matrices for one example."""
    ckpt = load_checkpoint(ckpt_path)
    records = read_corpus(data_path, max_objects=ckpt.model_config.max_objects)
    if not (0 <= example_id < len(records)):
        raise ValueError(f"example id {example_id} out of range (corpus has {len(records)})")
    dump = dump_attention(ckpt, records[example_id], str(example_id))
    write_attention_dump(out_path, dump)
    click.echo(f"wrote attention matrices for example {example_id} to {out_path}")


@main.command("check-grad")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--beta", type=float, default=0.1, show_default=True)
@_fail_on_errors
def check_grad(seed: int, alpha: float, beta: float) -> None:
    """Finite-difference gradient check on the micro configuration."""
    result = gradient_check(seed=seed, alpha=alpha, beta=beta)
    click.echo(
        f"checked {result.n_params} parameters in {result.runtime_s:.1f}s; "
        f"max relative error {result.max_rel_err:.3e} at {result.worst_param}"
    )
    if not result.passed:
        raise click.ClickException("gradient check failed (max relative error >= 1e-3)")


if __name__ == "__main__":
    main()
