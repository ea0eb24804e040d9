import numpy as np
import pytest

from ardloop.evalkit import ProtocolError, cmc_map, label_accuracy, selection_quality

from conftest import oracle_cmc_map


def random_reid_instance(rng):
    n_q = int(rng.integers(1, 21))
    n_g = int(rng.integers(n_q + 1, 41))
    d = int(rng.integers(1, 5))
    n_ids = int(rng.integers(1, n_q + 1))
    q_ids = [f"p{i}" for i in rng.integers(0, n_ids, n_q)]
    q_cams = [1] * n_q
    g_ids = [f"p{i}" for i in rng.integers(0, n_ids + 3, n_g)]
    g_cams = list(rng.integers(1, 3, n_g))
    # guarantee every probe a cross-camera positive
    for j, ident in enumerate(sorted(set(q_ids))):
        g_ids[j], g_cams[j] = ident, 2
    q_emb = rng.integers(-2, 3, (n_q, d)).astype(float)
    g_emb = rng.integers(-2, 3, (n_g, d)).astype(float)
    return q_emb, q_ids, q_cams, g_emb, g_ids, g_cams


@pytest.mark.parametrize("seed", range(15))
def test_matches_brute_force(seed):
    inst = random_reid_instance(np.random.default_rng(seed))
    cmc, mAP = cmc_map(*inst)
    want_cmc, want_map = oracle_cmc_map(*inst)
    np.testing.assert_array_equal(cmc, want_cmc)
    assert mAP == pytest.approx(want_map, abs=1e-9)


def test_perfect_copy_to_second_camera():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(6, 3))
    ids = [f"p{i}" for i in range(6)]
    cmc, mAP = cmc_map(emb, ids, [1] * 6, emb.copy(), ids, [2] * 6)
    assert cmc[0] == 1.0 and mAP == 1.0


def test_hand_computed_average_precision():
    # positives at ranks 1 and 3 of 4
    g = np.array([[1.0], [2.0], [3.0], [4.0]])
    cmc, mAP = cmc_map([[0.0]], ["a"], [1], g, ["a", "b", "a", "c"], [2, 2, 2, 2])
    assert mAP == pytest.approx(5 / 6, abs=1e-12)
    np.testing.assert_array_equal(cmc, [1, 1, 1, 1])


def test_same_camera_same_identity_excluded():
    g = np.array([[0.0], [5.0]])
    cmc, mAP = cmc_map([[0.0]], ["a"], [1], g, ["a", "a"], [1, 2])
    assert cmc[0] == 1.0 and mAP == 1.0


def test_cmc_monotone_and_ends_at_one():
    for seed in range(5):
        cmc, mAP = cmc_map(*random_reid_instance(np.random.default_rng(100 + seed)))
        assert np.all(np.diff(cmc) >= 0) and cmc[-1] == 1.0 and 0 <= mAP <= 1


def test_missing_positive_names_probe():
    with pytest.raises(ProtocolError, match="probe q7"):
        cmc_map([[0.0]], ["a"], [1], [[1.0]], ["a"], [1], probe_names=["q7"])


def test_label_accuracy():
    gt = {"a": "x", "b": "y", "c": "z", "d": "w"}
    assert label_accuracy(dict(gt), gt) == 1.0
    assert label_accuracy({}, gt) == 1.0
    assert label_accuracy({"a": "x", "b": "y", "c": "z", "d": "q"}, gt) == 0.75
    with pytest.raises(KeyError):
        label_accuracy({"zz": "x"}, gt)


def test_selection_quality():
    gt = {f"u{i:02d}": "ok" for i in range(20)}
    pseudo = {i: "ok" if n < 16 else "bad" for n, i in enumerate(sorted(gt))}
    correct = sorted(i for i in pseudo if pseudo[i] == "ok")
    wrong = sorted(i for i in pseudo if pseudo[i] == "bad")
    assert selection_quality(correct, pseudo, gt) == (1.0, 1.0)
    assert selection_quality([], pseudo, gt) == (1.0, 0.0)
    assert selection_quality(correct[:8] + wrong[:2], pseudo, gt) == (0.8, 0.5)
    with pytest.raises(KeyError):
        selection_quality(["nope"], pseudo, gt)
