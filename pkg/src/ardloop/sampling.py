"""Sample-selection rules.

Relative-distance selection (fixed k, the SRD rule) and its convergence test,
the k probe, the adaptive k scheduler (ARD), and the two baselines: linear
growth by distance rank and plain absolute-distance selection.

k values are held as ``Decimal`` so stepping by 0.1 lands on 1.0 exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Mapping, Optional

from ardloop.core import DistanceRecord

log = logging.getLogger(__name__)

K_MAX = Decimal("1.0")
CONTINUE = "continue_at_k"
ADVANCE = "advance_k"
TERMINATE = "terminate"


def _dec(x) -> Decimal:
    return x if isinstance(x, Decimal) else Decimal(str(x))


@dataclass(frozen=True)
class SamplerConfig:
    k0: float = 0.5
    k_step: float = 0.1
    probe_fraction: float = 0.15
    coeff_mode: str = "dynamic"
    coeff_intercept: float = 1.2
    fixed_coeff: float = 0.3
    b: float = 0.01
    b_mode: str = "fraction"
    p: float = 0.05
    max_iters_per_k: int = 50

    def __post_init__(self):
        if self.coeff_mode not in ("dynamic", "fixed"):
            raise ValueError(f"coeff_mode must be 'dynamic' or 'fixed', got {self.coeff_mode!r}")
        if self.b_mode not in ("fraction", "absolute"):
            raise ValueError(f"b_mode must be 'fraction' or 'absolute', got {self.b_mode!r}")
        if not 0 < self.probe_fraction < 1:
            raise ValueError("probe_fraction must lie in (0, 1)")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        for name in ("k0", "k_step", "fixed_coeff", "b", "coeff_intercept"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters_per_k < 2:
            raise ValueError("max_iters_per_k must be at least 2")

    def coeff(self, k) -> float:
        if self.coeff_mode == "fixed":
            return self.fixed_coeff
        return float(_dec(self.coeff_intercept) - _dec(k))


def srd_select(records: Mapping[str, DistanceRecord], k) -> set[str]:
    """Ids whose intra distance is strictly below ``k`` times the inter distance."""
    k = float(k)
    if k <= 0:
        raise ValueError("k must be positive")
    return {i for i, r in records.items() if r.d_intra < k * r.d_inter}


def srd_converged(c_t: int, c_prev: Optional[int], b: float, M: int, b_mode: str = "fraction") -> bool:
    """True once the selected count grew by less than ``b`` (a fraction of ``M`` by default)."""
    if M <= 0:
        raise ValueError("M must be positive")
    if c_prev is None:
        return False
    bound = b * M if b_mode == "fraction" else b
    return (c_t - c_prev) < bound


def k_grid(cfg: SamplerConfig) -> list[Decimal]:
    step = _dec(cfg.k_step)
    k = _dec(cfg.k0) + step
    grid = []
    while k <= K_MAX:
        grid.append(k)
        k += step
    return grid


def k_probe(select_count: Callable[[Decimal], int], L_size: int, cfg: SamplerConfig) -> Decimal:
    """First k on the grid k0+step, k0+2*step, ... <= 1.0 that selects at least
    ``probe_fraction * L_size`` samples; 1.0 if none does."""
    if L_size <= 0:
        raise ValueError("L_size must be positive")
    need = cfg.probe_fraction * L_size
    for k in k_grid(cfg):
        if select_count(k) >= need:
            return k
    return K_MAX


@dataclass
class ArdState:
    """Adaptive-k scheduler state; ``history`` holds the counts seen at the current k."""

    k: Decimal
    k_step: Decimal = Decimal("0.1")
    history: list[int] = field(default_factory=list)
    margin0: Optional[int] = None
    iteration: int = 0
    phase: str = "running"
    visited: list[Decimal] = field(default_factory=list)
    cap_breaches: int = 0

    def __post_init__(self):
        self.k = _dec(self.k)
        self.k_step = _dec(self.k_step)
        if not self.visited:
            self.visited = [self.k]

    def to_dict(self) -> dict:
        return {
            "k": str(self.k),
            "k_step": str(self.k_step),
            "history": list(self.history),
            "margin0": self.margin0,
            "iteration": self.iteration,
            "phase": self.phase,
            "visited": [str(v) for v in self.visited],
            "cap_breaches": self.cap_breaches,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArdState":
        return cls(
            k=Decimal(d["k"]),
            k_step=Decimal(d["k_step"]),
            history=list(d["history"]),
            margin0=d["margin0"],
            iteration=d["iteration"],
            phase=d["phase"],
            visited=[Decimal(v) for v in d["visited"]],
            cap_breaches=d["cap_breaches"],
        )


def ard_step(state: ArdState, new_count: int, cfg: SamplerConfig) -> tuple[str, Optional[Decimal]]:
    """Feed one selected count to the scheduler and decide what happens next.

    Returns ``(CONTINUE, None)``, ``(ADVANCE, new_k)`` or ``(TERMINATE, None)``.
    The first two counts at a k fix ``margin0``; afterwards k advances as soon
    as the per-iteration increment drops below ``coeff(k) * margin0``.
    """
    if state.phase != "running":
        raise RuntimeError(f"ard_step called in phase {state.phase!r}")
    state.iteration += 1
    state.history.append(int(new_count))
    h = state.history

    if len(h) < 2:
        return CONTINUE, None
    if len(h) == 2:
        state.margin0 = h[1] - h[0]
        if state.margin0 <= 0:
            return _advance(state)
        return CONTINUE, None
    if len(h) > cfg.max_iters_per_k:
        state.cap_breaches += 1
        log.warning("k=%s: %d iterations without convergence, forcing advance", state.k, len(h) - 1)
        return _advance(state)
    if h[-1] - h[-2] < cfg.coeff(state.k) * state.margin0:
        return _advance(state)
    return CONTINUE, None


def _advance(state: ArdState):
    state.k = state.k + state.k_step
    state.history = []
    state.margin0 = None
    if state.k > K_MAX:
        state.phase = "terminated"
        return TERMINATE, None
    state.visited.append(state.k)
    return ADVANCE, state.k


def _ranked(records: Mapping[str, DistanceRecord]) -> list[str]:
    return sorted(records, key=lambda i: (records[i].d_intra, i))


def linear_growth_count(t: int, p: float, M: int) -> int:
    if t < 1:
        raise ValueError("iteration index starts at 1")
    # round away float noise like 0.05 * 3 * 100 = 15.000000000000002 before the ceiling
    return min(M, math.ceil(round(min(1.0, p * t) * M, 9)))


def linear_growth_select(records: Mapping[str, DistanceRecord], t: int, p: float, M: int) -> set[str]:
    """The ceil(min(1, p*t) * M) samples with the smallest intra distance."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    n = linear_growth_count(t, p, M)
    return set(_ranked(records)[:n])


def absolute_select(records: Mapping[str, DistanceRecord], n: int) -> set[str]:
    """The ``n`` samples with the smallest intra distance, ties by id."""
    if n < 0 or n > len(records):
        raise ValueError(f"cannot select {n} of {len(records)} records")
    return set(_ranked(records)[:n])
