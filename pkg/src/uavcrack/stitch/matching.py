from __future__ import annotations

import numpy as np

from ..errors import InvalidParameter


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def match_descriptors(desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.8) -> np.ndarray:
    """Ratio-test matches that are also mutual nearest neighbours.

    Returns an ``(k, 3)`` float array of ``(index_a, index_b, distance)`` rows
    sorted by ``index_a``. With a single candidate in B the ratio test passes.
    """
    if not 0 < ratio < 1:
        raise InvalidParameter("ratio must lie in (0, 1)")
    desc_a = np.asarray(desc_a, dtype=float)
    desc_b = np.asarray(desc_b, dtype=float)
    if len(desc_a) == 0 or len(desc_b) == 0:
        return np.zeros((0, 3))
    dist = pairwise_distances(desc_a, desc_b)
    nn = np.argmin(dist, axis=1)
    rows = np.arange(len(desc_a))
    d1 = dist[rows, nn]
    if dist.shape[1] > 1:
        d2 = np.partition(dist, 1, axis=1)[:, 1]
    else:
        d2 = np.full(len(desc_a), np.inf)
    keep = d1 < ratio * d2
    back = np.argmin(dist, axis=0)
    keep &= back[nn] == rows
    idx = np.flatnonzero(keep)
    return np.column_stack([idx, nn[idx], d1[idx]]).astype(float)
