"""Versioned binary checkpoint container.

Layout (little-endian): magic ``GMTC``, u32 format version, u64 header
length, a UTF-8 JSON header (model config, train config, vocabularies, best
validation score, step counter, tensor manifest), then the raw float32
row-major tensor payloads in manifest order.  Payload bytes round-trip
exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import GroundedTranslator, ModelConfig
from .vocab import Vocabulary

_MAGIC = b"GMTC"
_VERSION = 1


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict[str, torch.Tensor]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train_config: dict | None
    best_score: float | None
    step: int

    def build_model(self) -> GroundedTranslator:
        model = GroundedTranslator(self.model_config)
        model.load_state_dict(self.state, strict=True)
        model.eval()
        return model


def _vocab_doc(vocab: Vocabulary) -> dict:
    return {"tokens": list(vocab.tokens), "counts": vocab.counts}


def _vocab_from_doc(doc: dict) -> Vocabulary:
    return Vocabulary(doc["tokens"], {k: int(v) for k, v in doc["counts"].items()})


def save_checkpoint(
    path: str | Path,
    model: GroundedTranslator,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    train_config: dict | None = None,
    best_score: float | None = None,
    step: int = 0,
) -> None:
    manifest = []
    payloads = []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        payloads.append(arr.tobytes())
    header = {
        "format_version": _VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": train_config,
        "best_score": best_score,
        "step": step,
        "src_vocab": _vocab_doc(src_vocab),
        "tgt_vocab": _vocab_doc(tgt_vocab),
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        state: dict[str, torch.Tensor] = {}
        for entry in header["tensors"]:
            if entry["dtype"] != "float32":
                raise ValueError(f"{path}: unsupported tensor dtype {entry['dtype']}")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            data = np.frombuffer(fh.read(count * 4), dtype="<f4")
            if data.size != count:
                raise ValueError(f"{path}: truncated checkpoint payload")
            state[entry["name"]] = torch.from_numpy(
                data.reshape(entry["shape"]).copy()
            )
    return Checkpoint(
        model_config=ModelConfig.from_dict(header["model_config"]),
        state=state,
        src_vocab=_vocab_from_doc(header["src_vocab"]),
        tgt_vocab=_vocab_from_doc(header["tgt_vocab"]),
        train_config=header.get("train_config"),
        best_score=header.get("best_score"),
        step=int(header.get("step", 0)),
    )
