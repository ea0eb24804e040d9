import math

import numpy as np
import pytest

from ardloop.core import DistanceRecord, Tracklet
from ardloop.learner import LearnerConfig
from ardloop.orchestrator import RunConfig
from ardloop.sampling import SamplerConfig
from ardloop.synthworld import WorldConfig, generate, split_one_example

GOLDEN_WORLD = WorldConfig(
    n_identities=50,
    n_cameras=2,
    tracklets_per_identity_per_camera=2,
    frames=4,
    height=12,
    width=4,
    channels=16,
    identity_spread=1.0,
    camera_offset_scale=1.0,
    frame_noise=0.8,
    cell_noise=0.5,
    seed=0,
)
GOLDEN_LEARNER = LearnerConfig(kind="linear-softmax", d_emb=16, steps=300, learning_rate=0.5,
                               label_smoothing=0.1, seed=0)


# acceptance verdict lines, printed after the run
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)


def golden_run_config(**kw) -> RunConfig:
    sampler = kw.pop("sampler", SamplerConfig())
    return RunConfig(learner=GOLDEN_LEARNER, sampler=sampler, record_timing=False, **kw)


# -- independent oracles ---------------------------------------------------
# Plain-Python double loops; they share no code with the library paths.


def oracle_dist(a, b):
    return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def oracle_estimate(labeled, unlabeled):
    out = {}
    for uid, u in unlabeled:
        best = None
        for lid, lv, lident in labeled:
            d = oracle_dist(u, lv)
            if best is None or d < best[0] or (d == best[0] and lid < best[1]):
                best = (d, lid, lident, lv)
        d_intra, anchor, ident, av = best
        d_inter = min(oracle_dist(av, lv) for lid, lv, li in labeled if li != ident)
        out[uid] = (ident, anchor, d_intra, d_inter)
    return out


def oracle_srd(records, k):
    chosen = set()
    for i, r in records.items():
        if r.d_intra < k * r.d_inter:
            chosen.add(i)
    return chosen


def oracle_cmc_map(q_emb, q_ids, q_cams, g_emb, g_ids, g_cams):
    n_g = len(g_ids)
    first_ranks = []
    aps = []
    for q in range(len(q_ids)):
        cands = []
        for g in range(n_g):
            if g_ids[g] == q_ids[q] and g_cams[g] == q_cams[q]:
                continue
            cands.append((oracle_dist(q_emb[q], g_emb[g]), g))
        cands.sort()
        hits = [rank for rank, (_, g) in enumerate(cands, start=1) if g_ids[g] == q_ids[q]]
        first_ranks.append(hits[0])
        aps.append(sum((j + 1) / r for j, r in enumerate(hits)) / len(hits))
    cmc = [sum(1 for f in first_ranks if f <= r) / len(first_ranks) for r in range(1, n_g + 1)]
    return cmc, sum(aps) / len(aps)


def random_records(rng, n, scale=10.0):
    return {
        f"u{i:04d}": DistanceRecord(f"a{i:04d}", float(rng.uniform(0, scale)), float(rng.uniform(0, scale)))
        for i in range(n)
    }


def make_tracklet(tid, frames, camera=1, identity=None):
    return Tracklet(tid, camera, np.asarray(frames, dtype=np.float64), identity)


@pytest.fixture(scope="session")
def golden_world():
    return generate(GOLDEN_WORLD)


@pytest.fixture(scope="session")
def golden_book(golden_world):
    return split_one_example(golden_world, 0)


@pytest.fixture(scope="session")
def small_world():
    return generate(WorldConfig(n_identities=8, frames=2, height=6, width=2, channels=4, seed=3))
