"""Cross-view top-K positive mining.

For each query the ``K`` queue entries whose other-view features are most
similar to the query's other-view feature become extra positives.  Ties are
broken towards the lowest column index so the selection is a total order.
"""

from __future__ import annotations

import numpy as np

from .numerics import as_matrix


class MiningError(ValueError):
    pass


def topk_indices(sim, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries per row, largest first.

    Equal values are ordered by ascending column index.
    """
    sim = as_matrix(sim, "similarities")
    if not 1 <= k <= sim.shape[1]:
        raise MiningError(f"k={k} out of range for {sim.shape[1]} columns")
    # stable sort on the negated row keeps lower indices first among ties
    order = np.argsort(-sim, axis=1, kind="stable")
    return order[:, :k]


def build_mask(cross_view_sim, k: int) -> np.ndarray:
    """Positive mask of shape ``N x (1 + fill)``.

    Column 0 (the instance's own augmentation) is always positive.  ``k=0``
    gives the plain instance-discrimination mask.
    """
    sim = as_matrix(cross_view_sim, "similarities")
    n, fill = sim.shape
    mask = np.zeros((n, 1 + fill), dtype=bool)
    mask[:, 0] = True
    if k == 0:
        return mask
    idx = topk_indices(sim, k)
    np.put_along_axis(mask[:, 1:], idx, True, axis=1)
    return mask


def self_only_mask(n: int, fill: int) -> np.ndarray:
    mask = np.zeros((n, 1 + fill), dtype=bool)
    mask[:, 0] = True
    return mask


def mask_quality(mask, query_labels, queue_labels) -> tuple[float, float]:
    """Precision and recall of the mined queue positives against class labels.

    Diagnostic only.  Precision is the share of mined entries sharing the
    query's class; recall is the share of same-class queue entries that were
    mined.  Either is NaN when its denominator is empty.
    """
    mask = np.asarray(mask, dtype=bool)
    query_labels = np.asarray(query_labels)
    queue_labels = np.asarray(queue_labels)
    if mask.ndim != 2 or mask.shape[0] != len(query_labels) or mask.shape[1] != 1 + len(queue_labels):
        raise MiningError(f"mask {mask.shape} misaligned with {len(query_labels)} queries "
                          f"and {len(queue_labels)} queue labels")
    mined = mask[:, 1:]
    same = query_labels[:, None] == queue_labels[None, :]
    n_mined = int(mined.sum())
    n_same = int(same.sum())
    hits = int((mined & same).sum())
    precision = hits / n_mined if n_mined else float("nan")
    recall = hits / n_same if n_same else float("nan")
    return precision, recall
