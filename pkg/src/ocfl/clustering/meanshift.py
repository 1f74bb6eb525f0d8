from __future__ import annotations

import numpy as np

from .. import _kernels
from .base import ClusterAssignment, as_matrix, single_cluster

BANDWIDTH_POLICIES = ("knn", "median")


def pairwise_euclidean(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def estimate_bandwidth(x: np.ndarray, policy: str = "knn", quantile: float = 0.3) -> float:
    """Bandwidth from the data.

    ``knn``: mean distance to the ``max(1, floor(quantile * n))``-th nearest
    neighbour, the point itself counted as the first. ``median``: median of
    the off-diagonal pairwise distances.
    """
    d = pairwise_euclidean(np.asarray(x, dtype=np.float64))
    n = d.shape[0]
    if policy == "median":
        return float(np.median(d[np.triu_indices(n, 1)]))
    if policy != "knn":
        raise ValueError(f"unknown bandwidth policy {policy!r}")
    k = max(1, int(quantile * n))
    return float(np.sort(d, axis=1)[:, k - 1 if k > 1 else 1].mean())


def mean_shift(gamma, bandwidth: float | None = None, rng=None, policy: str = "knn",
               tol: float = 1e-6, max_iter: int = 300, min_support: int = 2) -> ClusterAssignment:
    """Flat-kernel mean shift on the rows of the divergence matrix.

    Every row seeds one climb. Modes whose final window holds fewer than
    ``min_support`` points are not density peaks and are dropped (unless
    that would drop all of them). The rest are visited by decreasing window
    population and a mode within ``bandwidth / 2`` of a kept one is merged
    into it. Points go to the nearest kept mode.
    """
    g, ids = as_matrix(gamma)
    n = g.shape[0]
    if n < 2:
        raise ValueError("mean shift needs at least 2 points")
    if bandwidth is None:
        bandwidth = estimate_bandwidth(g, policy)
        if bandwidth == 0.0:  # all rows coincide
            return single_cluster(ids, "meanshift")
    elif not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    modes, intensity = _kernels.flat_mean_shift(g, g, float(bandwidth), tol, max_iter)
    order = sorted(range(n), key=lambda s: (-intensity[s], s))
    supported = [s for s in order if intensity[s] >= min_support]
    order = supported or order[:1]
    kept: list[np.ndarray] = []
    for s in order:
        if all(np.linalg.norm(modes[s] - m) >= bandwidth / 2.0 for m in kept):
            kept.append(modes[s])
    centers = np.array(kept)
    d2 = ((g[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return ClusterAssignment.from_labels(ids, labels, "meanshift")
