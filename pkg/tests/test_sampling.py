from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ardloop.core import DistanceRecord
from ardloop.sampling import (
    ADVANCE,
    CONTINUE,
    TERMINATE,
    ArdState,
    SamplerConfig,
    absolute_select,
    ard_step,
    k_grid,
    k_probe,
    linear_growth_select,
    srd_converged,
    srd_select,
)

from conftest import oracle_srd, random_records


def rec(d_intra, d_inter):
    return DistanceRecord("a", d_intra, d_inter)


class TestSrdSelect:
    def test_zero_intra_always_selected(self):
        for k in (1e-6, 0.3, 1.0):
            assert srd_select({"u": rec(0.0, 2.0)}, k) == {"u"}

    def test_strict_threshold(self):
        r = {"u": rec(3.0, 4.0)}
        assert srd_select(r, 0.7) == set()
        assert srd_select(r, 0.8) == {"u"}

    def test_zero_inter_never_selected(self):
        assert srd_select({"u": rec(0.0, 0.0)}, 1.0) == set()

    def test_rejects_nonpositive_k(self):
        with pytest.raises(ValueError):
            srd_select({}, 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_filter_oracle(self, seed):
        rng = np.random.default_rng(seed)
        records = random_records(rng, int(rng.integers(0, 201)))
        for k in (0.1, 0.5, 0.6, 0.9, 1.0):
            assert srd_select(records, k) == oracle_srd(records, k)

    def test_monotone_and_scale_invariant(self):
        rng = np.random.default_rng(1)
        records = random_records(rng, 150)
        grid = [0.2, 0.4, 0.6, 0.8, 1.0]
        sels = [srd_select(records, k) for k in grid]
        assert all(a <= b for a, b in zip(sels, sels[1:]))
        scaled = {i: DistanceRecord(r.anchor_id, 8 * r.d_intra, 8 * r.d_inter) for i, r in records.items()}
        assert [srd_select(scaled, k) for k in grid] == sels


class TestConvergence:
    def test_equal_counts(self):
        assert srd_converged(40, 40, 0.01, 100)

    def test_threshold_arithmetic(self):
        assert srd_converged(109, 100, 0.01, 1000)
        assert not srd_converged(110, 100, 0.01, 1000)

    def test_first_iteration_never_converged(self):
        assert not srd_converged(0, None, 0.5, 10)

    def test_absolute_mode(self):
        assert srd_converged(104, 100, 5, 1000, b_mode="absolute")
        assert not srd_converged(105, 100, 5, 1000, b_mode="absolute")


class TestKProbe:
    def test_grid_is_exact(self):
        assert k_grid(SamplerConfig()) == [Decimal(x) for x in ("0.6", "0.7", "0.8", "0.9", "1.0")]

    def test_probe_picks_first_sufficient_k(self):
        counts = {"0.6": 3, "0.7": 9, "0.8": 20, "0.9": 40, "1.0": 60}
        assert k_probe(lambda k: counts[str(k)], 100, SamplerConfig()) == Decimal("0.8")

    def test_first_grid_point(self):
        assert k_probe(lambda k: 15, 100, SamplerConfig()) == Decimal("0.6")

    def test_fallback_to_one(self):
        assert k_probe(lambda k: 0, 100, SamplerConfig()) == Decimal("1.0")

    def test_probe_stops_at_first_hit(self):
        seen = []

        def count(k):
            seen.append(k)
            return 100 if k >= Decimal("0.7") else 0

        k_probe(count, 10, SamplerConfig())
        assert seen == [Decimal("0.6"), Decimal("0.7")]


class TestArdStep:
    def test_worked_example(self):
        cfg = SamplerConfig()
        state = ArdState(k=Decimal("0.7"))
        assert ard_step(state, 100, cfg) == (CONTINUE, None)
        assert ard_step(state, 130, cfg) == (CONTINUE, None)
        assert state.margin0 == 30
        # threshold (1.2 - 0.7) * 30 = 15; an increment of 15 keeps going
        assert ard_step(state, 145, cfg) == (CONTINUE, None)
        assert ard_step(state, 157, cfg) == (ADVANCE, Decimal("0.8"))
        assert state.history == [] and state.margin0 is None

    def test_zero_margin_advances_immediately(self):
        state = ArdState(k=Decimal("0.6"))
        ard_step(state, 50, SamplerConfig())
        assert ard_step(state, 50, SamplerConfig()) == (ADVANCE, Decimal("0.7"))

    def test_advance_past_one_terminates(self):
        state = ArdState(k=Decimal("1.0"))
        ard_step(state, 10, SamplerConfig())
        assert ard_step(state, 9, SamplerConfig()) == (TERMINATE, None)
        assert state.phase == "terminated"
        with pytest.raises(RuntimeError):
            ard_step(state, 9, SamplerConfig())

    def test_fixed_coefficient(self):
        cfg = SamplerConfig(coeff_mode="fixed", fixed_coeff=0.3)
        state = ArdState(k=Decimal("0.7"))
        for c in (100, 130, 140):
            assert ard_step(state, c, cfg) == (CONTINUE, None)
        # 8 < 0.3 * 30 = 9
        assert ard_step(state, 148, cfg)[0] == ADVANCE

    def test_coefficient_values(self):
        assert SamplerConfig().coeff(Decimal("0.7")) == 0.5
        assert SamplerConfig(coeff_intercept=1.5).coeff(Decimal("1.0")) == 0.5
        assert SamplerConfig(coeff_mode="fixed").coeff(Decimal("0.9")) == 0.3

    def test_iteration_cap_forces_advance(self):
        cfg = SamplerConfig(max_iters_per_k=5)
        state = ArdState(k=Decimal("0.6"))
        decisions = [ard_step(state, 10 * i, cfg)[0] for i in range(6)]
        assert decisions[-1] == ADVANCE and state.cap_breaches == 1

    def test_state_round_trip(self):
        state = ArdState(k=Decimal("0.8"))
        ard_step(state, 3, SamplerConfig())
        assert ArdState.from_dict(state.to_dict()) == state

    @given(st.lists(st.integers(0, 300), min_size=1, max_size=400), st.sampled_from(["dynamic", "fixed"]))
    def test_k_never_decreases_and_terminates(self, counts, mode):
        cfg = SamplerConfig(coeff_mode=mode)
        state = ArdState(k=Decimal("0.6"))
        ks = [state.k]
        steps = 0
        while state.phase == "running":
            c = counts[steps % len(counts)]
            ard_step(state, c, cfg)
            ks.append(state.k)
            steps += 1
        assert all(a <= b for a, b in zip(ks, ks[1:]))
        assert steps <= 5 * (cfg.max_iters_per_k + 1)


class TestBaselines:
    def test_linear_full_coverage_at_twenty(self):
        rng = np.random.default_rng(0)
        records = random_records(rng, 137)
        assert linear_growth_select(records, 20, 0.05, 137) == set(records)
        assert len(linear_growth_select(records, 19, 0.05, 137)) < 137

    def test_linear_first_step_is_five_closest(self):
        rng = np.random.default_rng(1)
        records = random_records(rng, 100)
        want = set(sorted(records, key=lambda i: (records[i].d_intra, i))[:5])
        assert linear_growth_select(records, 1, 0.05, 100) == want

    def test_linear_no_float_overshoot(self):
        records = random_records(np.random.default_rng(2), 100)
        assert [len(linear_growth_select(records, t, 0.05, 100)) for t in (3, 7, 13)] == [15, 35, 65]

    def test_linear_idempotent_after_full(self):
        records = random_records(np.random.default_rng(3), 40)
        assert linear_growth_select(records, 25, 0.05, 40) == linear_growth_select(records, 20, 0.05, 40)

    @given(st.integers(1, 300), st.floats(0.01, 1.0))
    def test_linear_sizes_nondecreasing(self, M, p):
        records = {f"u{i:03d}": rec(float(i % 7), 1.0) for i in range(M)}
        sizes = [len(linear_growth_select(records, t, p, M)) for t in range(1, 30)]
        assert sizes == sorted(sizes)

    def test_absolute_examples(self):
        r = {"a": rec(1, 1), "b": rec(3, 1), "c": rec(2, 1)}
        assert absolute_select(r, 0) == set()
        assert absolute_select(r, 3) == {"a", "b", "c"}
        assert absolute_select(r, 2) == {"a", "c"}
        with pytest.raises(ValueError):
            absolute_select(r, 4)

    def test_absolute_ties_by_id(self):
        r = {"b": rec(1, 1), "a": rec(1, 1), "c": rec(1, 1)}
        assert absolute_select(r, 2) == {"a", "b"}
