"""Re-identification metrics (CMC, mAP) and pseudo-label quality measures."""

from __future__ import annotations

from typing import Mapping, Optional

import numpy as np

from ardloop.core import pairwise_l2


class ProtocolError(ValueError):
    """A probe has no valid cross-camera positive in the gallery."""


def cmc_map(
    probe_emb,
    probe_ids,
    probe_cams,
    gallery_emb,
    gallery_ids,
    gallery_cams,
    probe_names: Optional[list] = None,
) -> tuple[np.ndarray, float]:
    """CMC curve and mean average precision.

    Gallery entries sharing both identity and camera with the probe are
    dropped; the rest are ranked by ascending L2 distance, ties broken by
    gallery index. ``cmc[r]`` is the fraction of probes whose first correct
    match is within the top ``r + 1``.
    """
    probe_emb = np.atleast_2d(np.asarray(probe_emb, dtype=np.float64))
    gallery_emb = np.atleast_2d(np.asarray(gallery_emb, dtype=np.float64))
    probe_ids = np.asarray(probe_ids, dtype=object)
    probe_cams = np.asarray(probe_cams)
    gallery_ids = np.asarray(gallery_ids, dtype=object)
    gallery_cams = np.asarray(gallery_cams)
    n_probe, n_gal = len(probe_ids), len(gallery_ids)
    if n_probe == 0 or n_gal == 0:
        raise ValueError("probe and gallery must be nonempty")
    if probe_emb.shape[0] != n_probe or gallery_emb.shape[0] != n_gal:
        raise ValueError("embedding rows and metadata lengths differ")

    dist = pairwise_l2(probe_emb, gallery_emb)
    order_tiebreak = np.arange(n_gal)
    hits = np.zeros(n_gal)
    aps = np.empty(n_probe)
    for q in range(n_probe):
        keep = ~((gallery_ids == probe_ids[q]) & (gallery_cams == probe_cams[q]))
        idx = np.nonzero(keep)[0]
        order = idx[np.lexsort((order_tiebreak[idx], dist[q, idx]))]
        match = gallery_ids[order] == probe_ids[q]
        if not match.any():
            name = probe_names[q] if probe_names is not None else q
            raise ProtocolError(f"probe {name} has no valid positive in the gallery")
        ranks = np.nonzero(match)[0] + 1
        hits[ranks[0] - 1:] += 1
        aps[q] = np.mean(np.arange(1, len(ranks) + 1) / ranks)
    return hits / n_probe, float(aps.mean())


def label_accuracy(pseudo: Mapping[str, str], gt: Mapping[str, str]) -> float:
    """Fraction of pseudo labels equal to ground truth; 1.0 for an empty table."""
    unknown = [i for i in pseudo if i not in gt]
    if unknown:
        raise KeyError(f"ids without ground truth: {sorted(unknown)[:5]}")
    if not pseudo:
        return 1.0
    return sum(pseudo[i] == gt[i] for i in pseudo) / len(pseudo)


def selection_quality(selected, pseudo: Mapping[str, str], gt: Mapping[str, str]) -> tuple[float, float]:
    """(precision of the selection, share of all correct pseudo labels it recovers)."""
    selected = set(selected)
    if not selected <= set(pseudo):
        raise KeyError("selected ids must be pseudo-labeled")
    unknown = [i for i in pseudo if i not in gt]
    if unknown:
        raise KeyError(f"ids without ground truth: {sorted(unknown)[:5]}")
    correct = {i for i in pseudo if pseudo[i] == gt[i]}
    hit = len(selected & correct)
    precision = hit / len(selected) if selected else 1.0
    recall = hit / len(correct) if correct else 0.0
    return precision, recall
