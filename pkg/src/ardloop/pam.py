"""Part-based feature composition over numeric frame feature maps.

One global branch plus ``p`` horizontal part branches (default 1:2:2:1).
Every branch is average pooled per frame, linearly reduced, averaged over
time, and the branch outputs are concatenated as [global, part1..partp].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ardloop.core import DimensionError, Tracklet

DEFAULT_RATIO = (1, 2, 2, 1)


def split_rows(H: int, ratio: Sequence[int] = DEFAULT_RATIO) -> list[tuple[int, int]]:
    """Half-open row intervals cutting ``H`` rows in proportion to ``ratio``.

    Sizes start at ``floor(H * r / sum(ratio))``. Leftover rows first fill any
    part that came out empty (in order), then go one at a time to the earliest
    parts.

    >>> split_rows(7)
    [(0, 2), (2, 4), (4, 6), (6, 7)]
    """
    p = len(ratio)
    if p < 1 or any(r <= 0 for r in ratio):
        raise ValueError(f"ratio must be a nonempty sequence of positive integers, got {ratio}")
    if H < p:
        raise ValueError(f"H={H} too small for {p} nonempty parts")
    total = sum(ratio)
    sizes = [H * r // total for r in ratio]
    left = H - sum(sizes)
    for i in range(p):
        if left and sizes[i] == 0:
            sizes[i] = 1
            left -= 1
    i = 0
    while left:
        sizes[i % p] += 1
        left -= 1
        i += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(p)]


def global_avg_pool(fmap: np.ndarray) -> np.ndarray:
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3:
        raise DimensionError(f"feature map must be (H, W, C), got {fmap.shape}")
    return fmap.mean(axis=(0, 1))


def part_avg_pool(fmap: np.ndarray, ranges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Per-part channel means; returns an array of shape (len(ranges), C)."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3:
        raise DimensionError(f"feature map must be (H, W, C), got {fmap.shape}")
    _check_ranges(ranges, fmap.shape[0])
    return np.stack([fmap[s:e].mean(axis=(0, 1)) for s, e in ranges])


def _check_ranges(ranges, H):
    pos = 0
    for s, e in ranges:
        if s != pos or e <= s:
            raise DimensionError(f"part ranges {list(ranges)} are not contiguous nonempty intervals")
        pos = e
    if pos != H:
        raise DimensionError(f"part ranges cover {pos} rows, map has {H}")


def project(v: np.ndarray, P: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or v.shape[-1] != P.shape[0]:
        raise DimensionError(f"cannot project vector of dim {v.shape[-1]} with matrix {P.shape}")
    return v @ P


def temporal_avg(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[0] == 0:
        raise ValueError("temporal_avg needs at least one vector")
    return arr.mean(axis=0)


@dataclass(frozen=True)
class BranchProjections:
    """One ``C x d_emb`` reduction matrix per branch: global first, then parts."""

    matrices: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=np.float64) for m in self.matrices)
        if len(mats) < 2:
            raise ValueError("need a global projection and at least one part projection")
        shape = mats[0].shape
        if any(m.ndim != 2 or m.shape != shape for m in mats):
            raise DimensionError("branch projections must share one (C, d_emb) shape")
        if not all(np.all(np.isfinite(m)) for m in mats):
            raise ValueError("non-finite projection entries")
        object.__setattr__(self, "matrices", mats)

    @property
    def n_parts(self) -> int:
        return len(self.matrices) - 1

    @property
    def in_dim(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def d_emb(self) -> int:
        return self.matrices[0].shape[1]

    @classmethod
    def identity(cls, C: int, d_emb: int, n_parts: int = 4) -> "BranchProjections":
        eye = np.eye(C, d_emb)
        return cls(tuple(eye.copy() for _ in range(n_parts + 1)))


def pooled_streams(frames: np.ndarray, ratio: Sequence[int] = DEFAULT_RATIO) -> np.ndarray:
    """GAP and part pools for every frame: shape (T, 1 + p, C)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise DimensionError(f"frames must be (T, H, W, C), got {frames.shape}")
    ranges = split_rows(frames.shape[1], ratio)
    glob = frames.mean(axis=(1, 2))[:, None, :]
    parts = np.stack([frames[:, s:e].mean(axis=(1, 2)) for s, e in ranges], axis=1)
    return np.concatenate([glob, parts], axis=1)


def aggregate_tracklet(
    t: Tracklet, proj: BranchProjections, ratio: Sequence[int] = DEFAULT_RATIO
) -> np.ndarray:
    """Embed a tracklet as the concatenation of its temporally averaged branch features."""
    if len(ratio) != proj.n_parts:
        raise DimensionError(f"{len(ratio)} parts in ratio but {proj.n_parts} part projections")
    if t.shape[2] != proj.in_dim:
        raise DimensionError(
            f"tracklet {t.tracklet_id} has C={t.shape[2]}, projections expect {proj.in_dim}"
        )
    streams = pooled_streams(t.frames, ratio)  # (T, B, C)
    out = [temporal_avg(project(streams[:, b], P)) for b, P in enumerate(proj.matrices)]
    return np.concatenate(out)
