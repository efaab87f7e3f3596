"""Run configuration: a single YAML document with model / train / data
sections, validated against explicit defaults for every pipeline
hyperparameter (gamma 0.48, alpha 0.1, beta 0.1, patience 10, max_objects
20, d_word 256, d_hidden 512).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .training import TrainConfig

MODEL_DEFAULTS = {
    "d_word": 256,
    "d_hidden": 512,
    "n_heads": 4,
    "d_obj": 2048,
    "variant": "object_level",
    "max_objects": 20,
    "obj_attn_residual": False,
    "seed": None,  # None -> train seed
}


@dataclass
class DataConfig:
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    train_degraded: str | None = None
    valid_degraded: str | None = None
    test_degraded: str | None = None
    embeddings: str | None = None


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def model_kwargs(self) -> dict:
        kwargs = dict(self.model)
        if kwargs.get("seed") is None:
            kwargs["seed"] = self.train.seed
        return kwargs


def _check_keys(section: str, doc: dict, allowed: set[str]) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(
            f"unknown {section} config keys: {sorted(unknown)}; allowed: {sorted(allowed)}"
        )


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValueError("config document must be a mapping")
    _check_keys("top-level", doc, {"model", "train", "data"})
    model_doc = dict(MODEL_DEFAULTS)
    user_model = doc.get("model") or {}
    _check_keys("model", user_model, set(MODEL_DEFAULTS))
    model_doc.update(user_model)

    train_doc = doc.get("train") or {}
    _check_keys("train", train_doc, {f.name for f in fields(TrainConfig)})
    train_cfg = TrainConfig(**train_doc)

    data_doc = doc.get("data") or {}
    _check_keys("data", data_doc, {f.name for f in fields(DataConfig)})
    data_cfg = DataConfig(**data_doc)
    return RunConfig(model=model_doc, train=train_cfg, data=data_cfg)


def load_run_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return run_config_from_dict(doc)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_manifest(
    out_dir: str | Path,
    config_doc: dict,
    input_paths: dict[str, str | Path | None],
    output_paths: dict[str, str | Path],
    seeds: dict[str, int],
) -> Path:
    """Record what a run consumed and produced: config hash, dataset hashes,
    seeds, artifact version, and output paths.  Re-running with an identical
    manifest reproduces identical metric files."""
    from . import __version__

    manifest = {
        "artifact_version": __version__,
        "config_hash": hashlib.sha256(
            json.dumps(config_doc, sort_keys=True, default=str).encode()
        ).hexdigest(),
        "config": config_doc,
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)}
            for name, p in input_paths.items()
            if p is not None
        },
        "outputs": {name: str(p) for name, p in output_paths.items()},
        "seeds": seeds,
    }
    out_path = Path(out_dir) / "run_manifest.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return out_path
