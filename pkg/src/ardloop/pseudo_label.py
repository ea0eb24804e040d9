"""Nearest-labeled-neighbor label estimation and the intra/inter distances."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ardloop.core import DimensionError, DistanceRecord, pairwise_l2


def estimate_labels(
    labeled: Sequence[tuple[str, np.ndarray, str]],
    unlabeled: Sequence[tuple[str, np.ndarray]],
) -> dict[str, tuple[str, DistanceRecord]]:
    """Give every unlabeled sample the identity of its nearest labeled sample.

    ``labeled`` holds (tracklet_id, embedding, identity) triples and
    ``unlabeled`` (tracklet_id, embedding) pairs. For each unlabeled id the
    result holds the estimated identity and a ``DistanceRecord`` whose
    ``d_inter`` is the smallest distance from the anchor to a labeled sample
    of any other identity. Equal distances resolve to the smallest tracklet id.
    """
    if not labeled:
        raise ValueError("estimate_labels needs labeled samples")
    lab = sorted(labeled, key=lambda r: r[0])
    lab_ids = [r[0] for r in lab]
    lab_idents = np.array([r[2] for r in lab], dtype=object)
    if len(set(lab_idents)) < 2:
        raise ValueError("estimate_labels needs at least 2 labeled identities")
    if len(set(lab_ids)) != len(lab_ids):
        raise ValueError("duplicate labeled tracklet ids")
    L = np.stack([np.asarray(r[1], dtype=np.float64) for r in lab])
    if not unlabeled:
        return {}
    unl = sorted(unlabeled, key=lambda r: r[0])
    U = np.stack([np.asarray(r[1], dtype=np.float64) for r in unl])
    if L.ndim != 2 or U.ndim != 2 or U.shape[1] != L.shape[1]:
        raise DimensionError(f"embedding dimensions differ: labeled {L.shape}, unlabeled {U.shape}")

    # labeled rows are in id order, so argmin's first-occurrence rule is the id tie-break
    d_ul = pairwise_l2(U, L)
    anchors = np.argmin(d_ul, axis=1)

    d_ll = pairwise_l2(L, L)
    other = lab_idents[:, None] != lab_idents[None, :]
    d_inter = np.where(other, d_ll, np.inf).min(axis=1)

    out = {}
    for row, (uid, _) in enumerate(unl):
        a = anchors[row]
        out[uid] = (
            str(lab_idents[a]),
            DistanceRecord(lab_ids[a], float(d_ul[row, a]), float(d_inter[a])),
        )
    return out
