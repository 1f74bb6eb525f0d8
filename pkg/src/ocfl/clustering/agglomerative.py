from __future__ import annotations

import numpy as np

from .base import ClusterAssignment, as_matrix


def average_linkage_merges(gamma) -> list[tuple[int, int, float, int]]:
    """UPGMA merge sequence on a precomputed distance matrix.

    Rows are ``(a, b, height, size)`` with scipy's node numbering: leaves are
    ``0..n-1`` and the k-th merge creates node ``n + k``. Equal heights are
    resolved by the smallest ``(a, b)`` pair.
    """
    d, _ = as_matrix(gamma)
    n = d.shape[0]
    active = {i: [i] for i in range(n)}
    link = {(i, j): float(d[i, j]) for i in range(n) for j in range(i + 1, n)}
    merges = []
    for step in range(n - 1):
        (a, b), h = min(link.items(), key=lambda kv: (kv[1], kv[0]))
        members = active.pop(a) + active.pop(b)
        link = {k: v for k, v in link.items() if a not in k and b not in k}
        node = n + step
        for c, cm in active.items():
            link[(c, node)] = float(d[np.ix_(members, cm)].mean())
        active[node] = members
        merges.append((a, b, h, len(members)))
    return merges


def agglomerative_average(gamma, distance_threshold: float) -> ClusterAssignment:
    """Merge bottom-up while the closest average linkage is <= the threshold."""
    if not distance_threshold > 0:
        raise ValueError(f"distance_threshold must be > 0, got {distance_threshold}")
    d, ids = as_matrix(gamma)
    n = d.shape[0]
    groups = {i: [i] for i in range(n)}
    for step, (a, b, h, _) in enumerate(average_linkage_merges(d)):
        if h > distance_threshold:
            break
        groups[n + step] = groups.pop(a) + groups.pop(b)
    labels = np.empty(n, dtype=np.int64)
    for k, members in enumerate(sorted(groups.values(), key=min)):
        labels[members] = k
    return ClusterAssignment.from_labels(ids, labels, "agglomerative")
