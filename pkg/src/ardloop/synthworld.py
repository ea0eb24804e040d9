"""Seeded synthetic tracklet worlds with ground truth, plus the labeled/unlabeled splits."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from ardloop.core import LabelBook, Tracklet
from ardloop.pam import DEFAULT_RATIO, split_rows


@dataclass(frozen=True)
class WorldConfig:
    """Generator parameters. Defaults give the 50-identity, 2-camera golden world."""

    n_identities: int = 50
    n_cameras: int = 2
    tracklets_per_identity_per_camera: int = 2
    frames: int = 4
    height: int = 12
    width: int = 4
    channels: int = 16
    identity_spread: float = 1.0
    camera_offset_scale: float = 1.0
    frame_noise: float = 0.8
    cell_noise: float = 0.5
    distractor_count: int = 0
    striped: bool = False
    confusable_pairs: int = 0
    confusable_gap: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_identities < 2:
            raise ValueError("n_identities must be at least 2")
        for name in ("n_cameras", "tracklets_per_identity_per_camera", "frames", "width", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.height < 4:
            raise ValueError("height must be at least 4 for the part split")
        for name in ("identity_spread", "camera_offset_scale", "frame_noise", "cell_noise", "confusable_gap"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be nonnegative")
        if not 0 <= 2 * self.confusable_pairs <= self.n_identities:
            raise ValueError("confusable_pairs needs two identities per pair")

    @property
    def n_tracklets(self) -> int:
        return (
            self.n_identities * self.n_cameras * self.tracklets_per_identity_per_camera
            + self.distractor_count
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def identity_name(i: int) -> str:
    return f"id{i:04d}"


def generate(cfg: WorldConfig) -> list[Tracklet]:
    """Build every tracklet of the world; same config, same bits."""
    C, H, W, T = cfg.channels, cfg.height, cfg.width, cfg.frames
    ranges = split_rows(H, DEFAULT_RATIO)
    center_rng = np.random.default_rng([cfg.seed, 0])
    n_parts = len(ranges) if cfg.striped else 1
    centers = center_rng.normal(0.0, cfg.identity_spread, (cfg.n_identities, n_parts, C))
    for j in range(cfg.confusable_pairs):
        a, b = 2 * j, 2 * j + 1
        centers[b] = centers[a] + center_rng.normal(0.0, cfg.confusable_gap, (n_parts, C))
    distractor_centers = center_rng.normal(0.0, cfg.identity_spread, (cfg.distractor_count, n_parts, C))
    cam_offsets = np.random.default_rng([cfg.seed, 1]).normal(
        0.0, cfg.camera_offset_scale, (cfg.n_cameras, C)
    )

    def make(index, center, cam):
        rng = np.random.default_rng([cfg.seed, 2, index])
        jitter = rng.normal(0.0, cfg.frame_noise, (T, C))
        base = center[None, :, :] + cam_offsets[cam - 1][None, None, :] + jitter[:, None, :]
        if cfg.striped:
            rows = np.concatenate([np.repeat(base[:, i:i + 1], e - s, axis=1) for i, (s, e) in enumerate(ranges)], axis=1)
        else:
            rows = np.repeat(base, H, axis=1)
        fmap = np.repeat(rows[:, :, None, :], W, axis=2)
        fmap = fmap + rng.normal(0.0, cfg.cell_noise, (T, H, W, C))
        return fmap.astype(np.float32)

    out = []
    index = 0
    for ident in range(cfg.n_identities):
        for cam in range(1, cfg.n_cameras + 1):
            for _ in range(cfg.tracklets_per_identity_per_camera):
                out.append(
                    Tracklet(f"t{index:05d}", cam, make(index, centers[ident], cam), identity_name(ident))
                )
                index += 1
    for j in range(cfg.distractor_count):
        cam = 1 + j % cfg.n_cameras
        out.append(
            Tracklet(
                f"t{index:05d}", cam, make(index, distractor_centers[j], cam), f"distractor{j:04d}",
                distractor=True,
            )
        )
        index += 1
    return out


def split_one_example(dataset: Sequence[Tracklet], seed: int) -> LabelBook:
    """One labeled tracklet per identity, drawn from the lowest-numbered camera that has one."""
    by_ident: dict[str, dict[int, list[str]]] = defaultdict(lambda: defaultdict(list))
    for t in dataset:
        if t.distractor:
            continue
        if t.identity_gt is None:
            raise ValueError(f"tracklet {t.tracklet_id} has no identity; cannot build a labeled split")
        by_ident[t.identity_gt][t.camera_id].append(t.tracklet_id)
    rng = np.random.default_rng(seed)
    labeled = {}
    for ident in sorted(by_ident):
        cams = by_ident[ident]
        cam = min(c for c in cams if cams[c])
        cands = sorted(cams[cam])
        labeled[cands[rng.integers(len(cands))]] = ident
    if len(labeled) < 2:
        raise ValueError("a labeled split needs at least 2 identities")
    unlabeled = {t.tracklet_id for t in dataset} - set(labeled)
    return LabelBook(labeled, unlabeled)


def split_ratio(dataset: Sequence[Tracklet], ratio: float, seed: int, max_tries: int = 100) -> LabelBook:
    """Label ceil(ratio * N) randomly chosen non-distractor tracklets."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    pool = sorted((t for t in dataset if not t.distractor), key=lambda t: t.tracklet_id)
    if any(t.identity_gt is None for t in pool):
        raise ValueError("every non-distractor tracklet needs an identity for a ratio split")
    n = math.ceil(round(ratio * len(pool), 9))
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pick = sorted(rng.choice(len(pool), size=n, replace=False))
        labeled = {pool[i].tracklet_id: pool[i].identity_gt for i in pick}
        if len(set(labeled.values())) >= 2:
            unlabeled = {t.tracklet_id for t in dataset} - set(labeled)
            return LabelBook(labeled, unlabeled)
    raise ValueError(f"no split with 2 labeled identities after {max_tries} draws")
