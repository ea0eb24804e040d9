import numpy as np
import pytest

from ardloop.pseudo_label import estimate_labels

from conftest import oracle_estimate


def random_instance(rng):
    n_lab = int(rng.integers(2, 51))
    n_unl = int(rng.integers(1, 51))
    d = int(rng.integers(1, 9))
    n_ident = int(rng.integers(2, n_lab + 1))
    idents = [f"p{i}" for i in rng.integers(0, n_ident, n_lab)]
    idents[0], idents[1] = "p_first", "p_second"
    # coarse grid values make exact distance ties common
    labeled = [(f"L{i:03d}", rng.integers(-3, 4, d).astype(float), idents[i]) for i in range(n_lab)]
    unlabeled = [(f"U{i:03d}", rng.integers(-3, 4, d).astype(float)) for i in range(n_unl)]
    return labeled, unlabeled


def assert_matches_oracle(labeled, unlabeled):
    got = estimate_labels(labeled, unlabeled)
    want = oracle_estimate(labeled, unlabeled)
    assert set(got) == set(want)
    for uid, (ident, anchor, d_intra, d_inter) in want.items():
        g_ident, rec = got[uid]
        assert (g_ident, rec.anchor_id) == (ident, anchor)
        assert rec.d_intra == pytest.approx(d_intra, abs=1e-9)
        assert rec.d_inter == pytest.approx(d_inter, abs=1e-9)


def test_coincident_point_takes_its_label():
    lab = [("a", np.array([1.0, 2.0]), "A"), ("b", np.array([5.0, 5.0]), "B")]
    out = estimate_labels(lab, [("u", np.array([5.0, 5.0]))])
    assert out["u"][0] == "B" and out["u"][1].d_intra == 0.0


def test_one_dimensional_example():
    lab = [("a", np.array([0.0]), "A"), ("b", np.array([10.0]), "B")]
    ident, rec = estimate_labels(lab, [("u", np.array([2.0]))])["u"]
    assert (ident, rec.anchor_id, rec.d_intra, rec.d_inter) == ("A", "a", 2.0, 10.0)


def test_tie_goes_to_smallest_id():
    lab = [("b", np.array([1.0]), "B"), ("a", np.array([-1.0]), "A")]
    ident, rec = estimate_labels(lab, [("u", np.array([0.0]))])["u"]
    assert rec.anchor_id == "a" and ident == "A"


@pytest.mark.parametrize("seed", range(20))
def test_brute_force_equivalence(seed):
    assert_matches_oracle(*random_instance(np.random.default_rng(seed)))


@pytest.mark.parametrize("seed", range(5))
def test_scale_and_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    lab = [(f"L{i:02d}", rng.normal(size=4), f"p{i % 5}") for i in range(20)]
    unl = [(f"U{i:02d}", rng.normal(size=4)) for i in range(30)]
    base = estimate_labels(lab, unl)
    c, shift = 3.7, rng.normal(size=4)
    moved = estimate_labels(
        [(i, c * v + shift, p) for i, v, p in lab], [(i, c * v + shift) for i, v in unl]
    )
    for uid in base:
        (i0, r0), (i1, r1) = base[uid], moved[uid]
        assert (i0, r0.anchor_id) == (i1, r1.anchor_id)
        assert r1.d_intra / r1.d_inter == pytest.approx(r0.d_intra / r0.d_inter, rel=1e-9)


def test_inter_distance_depends_only_on_anchor():
    rng = np.random.default_rng(3)
    lab = [(f"L{i}", rng.normal(size=3), f"p{i % 3}") for i in range(9)]
    unl = [(f"U{i:02d}", rng.normal(size=3)) for i in range(40)]
    out = estimate_labels(lab, unl)
    by_anchor = {}
    for _, rec in out.values():
        by_anchor.setdefault(rec.anchor_id, set()).add(rec.d_inter)
    assert all(len(v) == 1 for v in by_anchor.values())


def test_needs_two_identities():
    lab = [("a", np.zeros(2), "A"), ("b", np.ones(2), "A")]
    with pytest.raises(ValueError):
        estimate_labels(lab, [("u", np.zeros(2))])


def test_coincident_labeled_points_give_zero_inter():
    lab = [("a", np.zeros(2), "A"), ("b", np.zeros(2), "B")]
    _, rec = estimate_labels(lab, [("u", np.ones(2))])["u"]
    assert rec.d_inter == 0.0


def test_dimension_mismatch():
    lab = [("a", np.zeros(2), "A"), ("b", np.ones(2), "B")]
    with pytest.raises(ValueError):
        estimate_labels(lab, [("u", np.zeros(3))])
