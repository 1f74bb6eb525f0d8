from __future__ import annotations

import numpy as np

from .base import ClusterAssignment, as_matrix


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = _sq_dists(x, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
    return np.array(centers, dtype=np.float64)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300, tol: float = 1e-9):
    centers = centers.copy()
    for _ in range(max_iter):
        labels = np.argmin(_sq_dists(x, centers), axis=1)
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = x[labels == j]
            if members.shape[0]:
                new[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centre
                far = np.argmax(_sq_dists(x, new)[np.arange(x.shape[0]), labels])
                new[j] = x[far]
        shift = float(np.sqrt(np.max(np.sum((new - centers) ** 2, axis=1))))
        centers = new
        if shift < tol:
            break
    d2 = _sq_dists(x, centers)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    return labels, centers, inertia


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 10,
           max_iter: int = 300, tol: float = 1e-9):
    """Best of ``n_init`` k-means++ / Lloyd runs. Returns (labels, centers, inertia)."""
    x = np.asarray(x, dtype=np.float64)
    best = None
    for _ in range(n_init):
        result = lloyd(x, _plusplus(x, k, rng), max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    return best


def kmeans_on_gamma(gamma, k: int, rng: np.random.Generator, n_init: int = 10) -> ClusterAssignment:
    """K-means on the rows of the divergence matrix, read as Euclidean points."""
    g, ids = as_matrix(gamma)
    n = g.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    labels, _, _ = kmeans(g, k, rng, n_init=n_init)
    return ClusterAssignment.from_labels(ids, labels, "kmeans")
