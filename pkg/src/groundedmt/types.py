"""Core data model: sentences with entity annotations, detected-object sets,
and parallel training examples.

All containers here are frozen after construction and safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Entity categories: the nine annotation classes plus the dedicated color class.
ENTITY_CATEGORIES = (
    "people",
    "scene",
    "clothing",
    "instruments",
    "animals",
    "bodyparts",
    "vehicles",
    "other",
    "notvisual",
    "color",
)

# Categories whose tokens count as vision-related (everything except notvisual).
VISUAL_CATEGORIES = tuple(c for c in ENTITY_CATEGORIES if c != "notvisual")


def category_tag(category: str) -> str:
    """Tag token that replaces a masked entity span, e.g. ``[people]``."""
    if category not in ENTITY_CATEGORIES:
        raise ValueError(f"unknown category label: {category!r}")
    return f"[{category}]"


CATEGORY_TAGS = tuple(category_tag(c) for c in VISUAL_CATEGORIES)


@dataclass(frozen=True)
class EntitySpan:
    """Half-open token span [start, end) annotated with an entity category."""

    start: int
    end: int
    category: str

    def __post_init__(self) -> None:
        if self.category not in ENTITY_CATEGORIES:
            raise ValueError(f"unknown category label: {self.category!r}")
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class SourceSentence:
    """Token-id sequence with entity spans and per-token vision flags.

    ``vision_related`` is derived from the spans when not supplied: a token is
    vision-related iff it lies inside a span whose category is not notvisual.
    """

    tokens: tuple[int, ...]
    entity_spans: tuple[EntitySpan, ...] = ()
    vision_related: tuple[bool, ...] = field(default=())
    degraded: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entity_spans", tuple(self.entity_spans))
        n = len(self.tokens)
        prev_end = 0
        for span in sorted(self.entity_spans, key=lambda s: s.start):
            if span.end > n:
                raise ValueError(f"span {span} out of bounds for length {n}")
            if span.start < prev_end:
                raise ValueError("entity spans overlap")
            prev_end = span.end
        if not self.vision_related:
            flags = [False] * n
            for span in self.entity_spans:
                if span.category != "notvisual":
                    for i in range(span.start, span.end):
                        flags[i] = True
            object.__setattr__(self, "vision_related", tuple(flags))
        else:
            object.__setattr__(self, "vision_related", tuple(self.vision_related))
            if len(self.vision_related) != n:
                raise ValueError("vision_related length mismatch")
            for span in self.entity_spans:
                if span.category != "notvisual":
                    for i in range(span.start, span.end):
                        if not self.vision_related[i]:
                            raise ValueError(
                                f"token {i} inside visual span lacks vision_related flag"
                            )

    def __len__(self) -> int:
        return len(self.tokens)


class ObjectSet:
    """Bag of detected objects for one image.

    ``features`` is an (m, d_obj) float32 matrix; ``masked`` objects contribute
    an all-zero feature row wherever features are consumed but remain present
    as attention keys. Object order carries no meaning.
    """

    __slots__ = ("features", "categories", "confidences", "masked")

    def __init__(
        self,
        features: np.ndarray,
        categories: list[str] | tuple[str, ...],
        confidences: np.ndarray | list[float] | None = None,
        masked: np.ndarray | list[bool] | None = None,
    ) -> None:
        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        m = features.shape[0]
        if len(categories) != m:
            raise ValueError("one category phrase per object required")
        if confidences is None:
            confidences = np.ones(m, dtype=np.float32)
        confidences = np.asarray(confidences, dtype=np.float32)
        if confidences.shape != (m,):
            raise ValueError("confidences must be length m")
        if np.any((confidences < 0.0) | (confidences > 1.0)):
            raise ValueError("confidences must lie in [0, 1]")
        if masked is None:
            masked = np.zeros(m, dtype=bool)
        masked = np.asarray(masked, dtype=bool)
        if masked.shape != (m,):
            raise ValueError("masked must be length m")
        features = features.copy()
        features.setflags(write=False)
        confidences.setflags(write=False)
        masked = masked.copy()
        masked.setflags(write=False)
        self.features = features
        self.categories = tuple(categories)
        self.confidences = confidences
        self.masked = masked

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def effective_features(self) -> np.ndarray:
        """Features with masked rows zeroed; this is what models consume."""
        out = self.features.copy()
        out[self.masked] = 0.0
        return out

    def with_masked(self, masked: np.ndarray | list[bool]) -> "ObjectSet":
        """Copy of this set with a new mask vector (features untouched)."""
        return ObjectSet(self.features, self.categories, self.confidences, masked)

    def top_confidence(self, k: int) -> "ObjectSet":
        """Keep the k highest-confidence objects (stable order among kept)."""
        if len(self) <= k:
            return self
        keep = np.sort(np.argsort(-self.confidences, kind="stable")[:k])
        return ObjectSet(
            self.features[keep],
            [self.categories[i] for i in keep],
            self.confidences[keep],
            self.masked[keep],
        )


class RelevanceProfile:
    """Object-to-sentence relevance for one (sentence, image) pair.

    ``similarity`` is the m x n cosine matrix between object category
    embeddings and source word embeddings, ``oss`` its per-row max, and ``d``
    the binary indicator oss > gamma (strict).
    """

    __slots__ = ("similarity", "oss", "d", "gamma")

    def __init__(self, similarity: np.ndarray, oss: np.ndarray, d: np.ndarray, gamma: float) -> None:
        self.similarity = np.asarray(similarity, dtype=np.float64)
        self.oss = np.asarray(oss, dtype=np.float64)
        self.d = np.asarray(d, dtype=np.int64)
        self.gamma = float(gamma)
        m = self.similarity.shape[0]
        if self.oss.shape != (m,) or self.d.shape != (m,):
            raise ValueError("oss/d must have one entry per object")


class VisionWeights:
    """Target-side vision weights for one example.

    ``similarity`` is the r x n target-to-source cosine matrix with
    non-vision-related source columns zeroed, ``tvs`` its per-row max, and
    ``q`` the frequency-debiased weights (sum to 1).
    """

    __slots__ = ("similarity", "tvs", "q")

    def __init__(self, similarity: np.ndarray, tvs: np.ndarray, q: np.ndarray) -> None:
        self.similarity = np.asarray(similarity, dtype=np.float64)
        self.tvs = np.asarray(tvs, dtype=np.float64)
        self.q = np.asarray(q, dtype=np.float64)
        r = self.similarity.shape[0]
        if self.tvs.shape != (r,) or self.q.shape != (r,):
            raise ValueError("tvs/q must have one entry per target token")


@dataclass(frozen=True)
class ParallelExample:
    """One (source sentence, target sentence, object set) training instance.

    ``target`` token ids end with the end-of-sequence id.  ``source_orig``
    holds the pre-degradation token ids for degraded examples so that
    preprocessing can compute similarities against the original words.
    """

    source: SourceSentence
    target: tuple[int, ...]
    objects: ObjectSet
    degraded: bool = False
    source_orig: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", tuple(self.target))
        if len(self.target) < 1:
            raise ValueError("target must contain at least one token")
        if self.source_orig is not None:
            object.__setattr__(self, "source_orig", tuple(self.source_orig))
