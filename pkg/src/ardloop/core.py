"""Shared domain types and the L2 distance primitive."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np


class DimensionError(ValueError):
    """Raised when two vectors or maps do not have compatible shapes."""


@dataclass(frozen=True)
class Tracklet:
    """A sequence of per-frame feature maps with identity/camera metadata.

    ``frames`` has shape ``(T, H, W, C)``; each ``frames[t]`` is one frame
    feature map.
    """

    tracklet_id: str
    camera_id: int
    frames: np.ndarray
    identity_gt: Optional[str] = None
    distractor: bool = False

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4:
            raise DimensionError(
                f"tracklet {self.tracklet_id}: frames must be (T, H, W, C), got shape {frames.shape}"
            )
        if min(frames.shape) < 1:
            raise DimensionError(f"tracklet {self.tracklet_id}: empty frame dimension {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"tracklet {self.tracklet_id}: non-finite feature values")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self) -> tuple[int, int, int]:
        """The shared (H, W, C) of every frame."""
        return tuple(self.frames.shape[1:])

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class DistanceRecord:
    """Evidence for one unlabeled sample: nearest labeled anchor and the two distances."""

    anchor_id: str
    d_intra: float
    d_inter: float

    def __post_init__(self):
        if not (self.d_intra >= 0 and self.d_inter >= 0):
            raise ValueError(f"distances must be nonnegative, got {self.d_intra}, {self.d_inter}")


@dataclass
class LabelBook:
    """Labeling state of a run.

    ``labeled`` is fixed for the whole run; ``pseudo`` maps an originally
    unlabeled id to ``(identity, DistanceRecord)``; ``unlabeled`` holds the
    ids not yet consumed.
    """

    labeled: dict[str, str]
    unlabeled: set[str]
    pseudo: dict[str, tuple[str, DistanceRecord]] = field(default_factory=dict)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        lab = set(self.labeled)
        pse = set(self.pseudo)
        if lab & self.unlabeled or lab & pse or pse & self.unlabeled:
            raise ValueError("labeled, pseudo and unlabeled id sets must be pairwise disjoint")

    @property
    def original_unlabeled(self) -> set[str]:
        return self.unlabeled | set(self.pseudo)

    def copy(self) -> "LabelBook":
        return LabelBook(dict(self.labeled), set(self.unlabeled), dict(self.pseudo))

    def with_pseudo(self, pseudo: Mapping[str, tuple[str, DistanceRecord]]) -> "LabelBook":
        """New book whose pseudo set is ``pseudo``; all other original unlabeled ids stay unlabeled."""
        pool = self.original_unlabeled
        unknown = set(pseudo) - pool
        if unknown:
            raise ValueError(f"pseudo ids not in the unlabeled pool: {sorted(unknown)[:5]}")
        return LabelBook(dict(self.labeled), pool - set(pseudo), dict(pseudo))


def as_embedding(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"embedding must be a nonempty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding has non-finite components")
    return arr


def l2_distance(a, b) -> float:
    """Euclidean distance between two embeddings, computed in float64."""
    a = as_embedding(a)
    b = as_embedding(b)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def pairwise_l2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """All-pairs L2 distances between the rows of ``x`` (m, d) and ``y`` (n, d).

    Differences are formed explicitly instead of using the
    ``|x|^2 + |y|^2 - 2xy`` expansion, which loses exact zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise DimensionError("pairwise_l2 expects two 2-D arrays")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    out = np.empty((x.shape[0], y.shape[0]), dtype=np.float64)
    for i in range(x.shape[0]):
        diff = y - x[i]
        out[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization; zero rows are left at zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
