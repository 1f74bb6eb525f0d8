"""Pure-numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop for loop.
"""
from __future__ import annotations

import numpy as np


def cosine_divergence(x: np.ndarray) -> np.ndarray:
    """Pairwise cosine distances between the rows of ``x``.

    Only the upper triangle is evaluated; the lower one is a mirror, so the
    result is symmetric by construction. Rows must have non-zero norm.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n - 1):
        dots = x[i + 1 :] @ x[i]
        cos = dots / (norms[i] * norms[i + 1 :])
        d = np.clip(1.0 - cos, 0.0, 2.0)
        out[i, i + 1 :] = d
        out[i + 1 :, i] = d
    return out


def mutual_reachability_mst(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Prim's MST over the mutual-reachability graph.

    Returns an ``(n - 1, 3)`` array of ``(a, b, weight)`` rows in the order the
    edges were added, starting from vertex 0. Ties go to the lowest vertex.
    """
    dist = np.asarray(dist, dtype=np.float64)
    core = np.asarray(core, dtype=np.float64)
    n = dist.shape[0]
    edges = np.zeros((max(n - 1, 0), 3), dtype=np.float64)
    if n < 2:
        return edges
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.zeros(n, dtype=np.int64)
    current = 0
    in_tree[0] = True
    for step in range(n - 1):
        reach = np.maximum(np.maximum(dist[current], core), core[current])
        better = (~in_tree) & (reach < best)
        best[better] = reach[better]
        parent[better] = current
        candidates = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidates))
        edges[step] = (parent[nxt], nxt, best[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


def flat_mean_shift(
    points: np.ndarray,
    seeds: np.ndarray,
    bandwidth: float,
    tol: float = 1e-6,
    max_iter: int = 300,
) -> tuple[np.ndarray, np.ndarray]:
    """Flat-kernel mean shift from each seed.

    Returns ``(modes, intensity)`` where ``intensity[s]`` is the number of
    points inside the final window of seed ``s``.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    seeds = np.array(seeds, dtype=np.float64, copy=True)
    modes = np.empty_like(seeds)
    intensity = np.zeros(seeds.shape[0], dtype=np.int64)
    bw2 = bandwidth * bandwidth
    for s in range(seeds.shape[0]):
        mean = seeds[s].copy()
        count = 0
        for _ in range(max_iter):
            diff = points - mean
            inside = np.einsum("ij,ij->i", diff, diff) <= bw2
            count = int(inside.sum())
            if count == 0:
                break
            new = points[inside].mean(axis=0)
            shift = float(np.sqrt(np.sum((new - mean) ** 2)))
            mean = new
            if shift < tol:
                break
        modes[s] = mean
        intensity[s] = count
    return modes, intensity
