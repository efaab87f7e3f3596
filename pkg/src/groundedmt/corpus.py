"""Corpus file formats.

A corpus is a line-delimited JSON file, one example per line, with token
strings (ids are assigned later against a vocabulary).  Object feature
vectors live in a sidecar binary matrix file shared by the whole corpus;
each example references a row range of it.

Sidecar layout (little-endian): magic ``GMTF``, u32 version, u64 row count,
u32 feature dim, then row-major float32 data.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .types import EntitySpan, ObjectSet, RelevanceProfile, VisionWeights

_FEATURE_MAGIC = b"GMTF"
_FEATURE_VERSION = 1


def write_feature_file(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<IQI", _FEATURE_VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file (bad magic {magic!r})")
        version, n_rows, dim = struct.unpack("<IQI", fh.read(16))
        if version != _FEATURE_VERSION:
            raise ValueError(f"{path}: unsupported feature file version {version}")
        data = np.frombuffer(fh.read(n_rows * dim * 4), dtype="<f4")
    if data.size != n_rows * dim:
        raise ValueError(f"{path}: truncated feature file")
    return data.reshape(n_rows, dim).copy()


@dataclass
class FeatureRef:
    """Row range [start, end) of a sidecar feature file."""

    path: str
    start: int
    end: int


@dataclass
class CorpusRecord:
    """One corpus example at the token-string level, features loaded."""

    source_tokens: list[str]
    target_tokens: list[str]
    entity_spans: list[EntitySpan] = field(default_factory=list)
    objects: ObjectSet | None = None
    feature_ref: FeatureRef | None = None
    degraded: bool = False
    source_orig_tokens: list[str] | None = None
    object_is_true: list[bool] | None = None
    relevance: RelevanceProfile | None = None
    vision: VisionWeights | None = None

    def similarity_source_tokens(self) -> list[str]:
        """Tokens used for similarity profiles: the pre-degradation words
        when available, otherwise the source as stored."""
        return self.source_orig_tokens if self.source_orig_tokens else self.source_tokens


def _record_to_json(rec: CorpusRecord, out_dir: Path) -> dict:
    doc: dict = {
        "source_tokens": list(rec.source_tokens),
        "target_tokens": list(rec.target_tokens),
        "entity_spans": [[s.start, s.end, s.category] for s in rec.entity_spans],
    }
    if rec.feature_ref is not None:
        ref_path = Path(rec.feature_ref.path)
        if ref_path.is_absolute():
            try:
                ref_str = os.path.relpath(ref_path, out_dir)
            except ValueError:
                ref_str = str(ref_path)
        else:
            ref_str = str(ref_path)
        doc["object_feature_ref"] = {
            "path": ref_str,
            "start": rec.feature_ref.start,
            "end": rec.feature_ref.end,
        }
    if rec.objects is not None:
        doc["object_categories"] = list(rec.objects.categories)
        doc["object_confidences"] = [float(c) for c in rec.objects.confidences]
        if rec.objects.masked.any():
            doc["object_masked"] = [bool(b) for b in rec.objects.masked]
    if rec.degraded:
        doc["degraded"] = True
    if rec.source_orig_tokens is not None:
        doc["source_orig_tokens"] = list(rec.source_orig_tokens)
    if rec.object_is_true is not None:
        doc["object_is_true"] = [bool(b) for b in rec.object_is_true]
    if rec.relevance is not None:
        doc["relevance"] = {
            "gamma": rec.relevance.gamma,
            "similarity": rec.relevance.similarity.tolist(),
            "oss": rec.relevance.oss.tolist(),
            "d": rec.relevance.d.tolist(),
        }
    if rec.vision is not None:
        doc["vision"] = {
            "similarity": rec.vision.similarity.tolist(),
            "tvs": rec.vision.tvs.tolist(),
            "q": rec.vision.q.tolist(),
        }
    return doc


def write_corpus(path: str | Path, records: list[CorpusRecord]) -> None:
    path = Path(path)
    out_dir = path.resolve().parent
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_json(rec, out_dir), sort_keys=True))
            fh.write("\n")


def read_corpus(
    path: str | Path,
    max_objects: int | None = None,
    load_features: bool = True,
) -> list[CorpusRecord]:
    """Read a corpus file, resolving feature references relative to it.

    ``max_objects`` keeps only the highest-confidence objects per example.
    """
    path = Path(path)
    base = path.resolve().parent
    feature_cache: dict[str, np.ndarray] = {}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            records.append(_record_from_json(doc, base, feature_cache, max_objects, load_features))
    return records


def _record_from_json(
    doc: dict,
    base: Path,
    feature_cache: dict[str, np.ndarray],
    max_objects: int | None,
    load_features: bool,
) -> CorpusRecord:
    spans = [EntitySpan(int(s), int(e), str(c)) for s, e, c in doc.get("entity_spans", [])]
    feature_ref = None
    objects = None
    ref_doc = doc.get("object_feature_ref")
    if ref_doc is not None:
        ref_path = Path(ref_doc["path"])
        abs_path = ref_path if ref_path.is_absolute() else base / ref_path
        feature_ref = FeatureRef(str(abs_path), int(ref_doc["start"]), int(ref_doc["end"]))
        categories = doc.get("object_categories", [])
        confidences = doc.get("object_confidences", [1.0] * len(categories))
        masked = doc.get("object_masked")
        if load_features:
            key = str(abs_path)
            if key not in feature_cache:
                feature_cache[key] = read_feature_file(abs_path)
            feats = feature_cache[key][feature_ref.start : feature_ref.end]
        else:
            feats = np.zeros((len(categories), 0), dtype=np.float32)
        objects = ObjectSet(feats, categories, confidences, masked)
    rec = CorpusRecord(
        source_tokens=[str(t) for t in doc["source_tokens"]],
        target_tokens=[str(t) for t in doc["target_tokens"]],
        entity_spans=spans,
        objects=objects,
        feature_ref=feature_ref,
        degraded=bool(doc.get("degraded", False)),
        source_orig_tokens=(
            [str(t) for t in doc["source_orig_tokens"]]
            if "source_orig_tokens" in doc
            else None
        ),
        object_is_true=(
            [bool(b) for b in doc["object_is_true"]] if "object_is_true" in doc else None
        ),
    )
    if "relevance" in doc:
        rel = doc["relevance"]
        rec.relevance = RelevanceProfile(
            np.asarray(rel["similarity"], dtype=np.float64),
            np.asarray(rel["oss"], dtype=np.float64),
            np.asarray(rel["d"], dtype=np.int64),
            float(rel["gamma"]),
        )
    if "vision" in doc:
        vis = doc["vision"]
        rec.vision = VisionWeights(
            np.asarray(vis["similarity"], dtype=np.float64),
            np.asarray(vis["tvs"], dtype=np.float64),
            np.asarray(vis["q"], dtype=np.float64),
        )
    if max_objects is not None and rec.objects is not None and len(rec.objects) > max_objects:
        keep = np.sort(np.argsort(-rec.objects.confidences, kind="stable")[:max_objects])
        rec.objects = ObjectSet(
            rec.objects.features[keep],
            [rec.objects.categories[i] for i in keep],
            rec.objects.confidences[keep],
            rec.objects.masked[keep],
        )
        if rec.object_is_true is not None:
            rec.object_is_true = [rec.object_is_true[i] for i in keep]
        if rec.relevance is not None:
            rec.relevance = RelevanceProfile(
                rec.relevance.similarity[keep],
                rec.relevance.oss[keep],
                rec.relevance.d[keep],
                rec.relevance.gamma,
            )
    return rec
