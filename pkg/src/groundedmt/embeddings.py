"""Pluggable word-embedding providers for preprocessing similarities.

Only relative similarities matter to the pipeline, so the default provider
draws a deterministic hash-seeded Gaussian vector per token.  Pretrained
vectors can be dropped in through a TSV file (token TAB float list) without
touching anything downstream.
"""

from __future__ import annotations

import hashlib
import threading
from pathlib import Path
from typing import Protocol

import numpy as np


class EmbeddingProvider(Protocol):
    dim: int

    def lookup(self, token: str) -> np.ndarray: ...


class HashEmbeddings:
    """Deterministic pseudo-random embeddings: same (token, seed) always
    yields the same unit-scale Gaussian vector, across processes and runs."""

    def __init__(self, dim: int = 64, seed: int = 0) -> None:
        if dim < 1:
            raise ValueError("embedding dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def lookup(self, token: str) -> np.ndarray:
        with self._lock:
            vec = self._cache.get(token)
            if vec is None:
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                words = np.frombuffer(digest[:16], dtype=np.uint32)
                rng = np.random.default_rng([self.seed, *words.tolist()])
                vec = rng.standard_normal(self.dim)
                if not np.any(vec):  # all-zero draw is effectively impossible
                    vec = np.ones(self.dim)
                vec.setflags(write=False)
                self._cache[token] = vec
            return vec


class FileEmbeddings:
    """Embeddings read from a TSV file; unknown tokens fall back to a
    hash-seeded provider of the same dimension."""

    def __init__(self, path: str | Path, seed: int = 0) -> None:
        self.vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _, rest = line.partition("\t")
                vec = np.asarray([float(x) for x in rest.split()], dtype=np.float64)
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise ValueError(f"{path}:{lineno}: inconsistent embedding dim")
                vec.setflags(write=False)
                self.vectors[token] = vec
        if dim is None:
            raise ValueError(f"{path}: empty embeddings file")
        self.dim = dim
        self._fallback = HashEmbeddings(dim, seed)

    def lookup(self, token: str) -> np.ndarray:
        vec = self.vectors.get(token)
        if vec is None:
            return self._fallback.lookup(token)
        return vec


def write_embeddings_file(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in sorted(vectors):
            vals = " ".join(repr(float(x)) for x in np.asarray(vectors[token]).ravel())
            fh.write(f"{token}\t{vals}\n")
