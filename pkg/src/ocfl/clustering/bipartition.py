from __future__ import annotations

import numpy as np

from .. import _kernels
from .base import as_matrix


def cosine_bipartition(gamma) -> tuple[list[int], list[int]]:
    """Split a cohort in two so that the largest cross-group cosine similarity is minimal.

    The optimum is the cut of the heaviest edge of a minimum spanning tree on
    the cosine distances (the single-linkage two-cluster cut). ``part_a``
    holds the lowest client id.
    """
    d, ids = as_matrix(gamma)
    n = d.shape[0]
    if n < 2:
        raise ValueError("bipartition needs a cohort of at least 2")
    mst = _kernels.mutual_reachability_mst(d, np.zeros(n))
    cut = int(np.argmax(mst[:, 2]))
    adj: dict[int, list[int]] = {i: [] for i in range(n)}
    for e, (a, b, _) in enumerate(mst):
        if e != cut:
            adj[int(a)].append(int(b))
            adj[int(b)].append(int(a))
    lowest = min(range(n), key=lambda i: ids[i])
    seen = {lowest}
    stack = [lowest]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    part_a = sorted(ids[i] for i in seen)
    part_b = sorted(ids[i] for i in range(n) if i not in seen)
    return part_a, part_b


def max_cross_similarity(gamma, part_a, part_b) -> float:
    d, ids = as_matrix(gamma)
    pos = {c: i for i, c in enumerate(ids)}
    ia = [pos[c] for c in part_a]
    ib = [pos[c] for c in part_b]
    return float(np.max(1.0 - d[np.ix_(ia, ib)]))
