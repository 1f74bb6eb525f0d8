from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import ClusterAssignment, as_matrix


@dataclass(frozen=True)
class AffinityConfig:
    damping: float = 0.5
    max_iter: int = 200
    convergence_iter: int = 15
    preference: float | None = None  # None: median off-diagonal similarity
    jitter: float = 1e-12  # relative tie-breaking noise added to similarities


def _messages(s: np.ndarray, damping: float, max_iter: int, convergence_iter: int):
    """Responsibility/availability updates. Returns (exemplars, iterations, converged)."""
    n = s.shape[0]
    r = np.zeros((n, n))
    a = np.zeros((n, n))
    rows = np.arange(n)
    history = np.zeros((n, convergence_iter), dtype=bool)
    exemplars = np.zeros(n, dtype=bool)
    for it in range(max_iter):
        tmp = a + s
        first = np.argmax(tmp, axis=1)
        top = tmp[rows, first]
        tmp[rows, first] = -np.inf
        second = tmp.max(axis=1)
        new_r = s - top[:, None]
        new_r[rows, first] = s[rows, first] - second
        r = damping * r + (1.0 - damping) * new_r

        rp = np.maximum(r, 0.0)
        rp[rows, rows] = r[rows, rows]
        new_a = rp.sum(axis=0)[None, :] - rp
        diag = new_a[rows, rows].copy()
        new_a = np.minimum(new_a, 0.0)
        new_a[rows, rows] = diag
        a = damping * a + (1.0 - damping) * new_a

        exemplars = (np.diag(a) + np.diag(r)) > 0
        history[:, it % convergence_iter] = exemplars
        if it >= convergence_iter:
            stable = np.all(history == history[:, :1], axis=1)
            if stable.all() and exemplars.any():
                return exemplars, it + 1, True
    return exemplars, max_iter, False


def affinity_propagation(gamma, cfg: AffinityConfig | None = None,
                         rng: np.random.Generator | None = None) -> ClusterAssignment:
    """Affinity propagation with similarities ``-gamma``.

    Non-convergence keeps the last exemplar set and tags the method
    ``"affinity:unconverged"``.
    """
    cfg = cfg or AffinityConfig()
    if not 0.5 <= cfg.damping < 1.0:
        raise ValueError(f"damping must lie in [0.5, 1), got {cfg.damping}")
    g, ids = as_matrix(gamma)
    n = g.shape[0]
    if n < 2:
        raise ValueError("affinity propagation needs at least 2 points")
    s = -np.array(g, dtype=np.float64)
    off = s[~np.eye(n, dtype=bool)]
    pref = float(np.median(off)) if cfg.preference is None else float(cfg.preference)

    if np.all(off == off[0]):
        # every pair looks the same: message passing cannot break the symmetry
        if pref < off[0]:
            return ClusterAssignment({int(c): 0 for c in ids}, 1, "affinity")
        return ClusterAssignment.from_labels(ids, range(n), "affinity")

    np.fill_diagonal(s, pref)
    if cfg.jitter > 0:
        rng = rng or np.random.default_rng(0)
        tiny = np.finfo(np.float64).tiny
        s = s + (cfg.jitter * s + tiny * 100) * rng.standard_normal((n, n))
    exemplars, _, converged = _messages(s, cfg.damping, cfg.max_iter, cfg.convergence_iter)
    tag = "affinity" if converged else "affinity:unconverged"
    centers = np.flatnonzero(exemplars)
    if centers.size == 0:
        centers = np.array([int(np.argmax(np.diag(s)))])
        tag = "affinity:unconverged"
    labels = np.argmax(s[:, centers], axis=1)
    labels[centers] = np.arange(centers.size)
    return ClusterAssignment.from_labels(ids, labels, tag)
