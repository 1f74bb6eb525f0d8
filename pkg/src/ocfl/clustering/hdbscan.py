"""HDBSCAN* on a precomputed distance matrix.

Pipeline: core distances -> mutual reachability -> MST -> single-linkage
hierarchy -> condensed tree -> excess-of-mass selection. Points left as noise
are attached to the cluster with the smallest mean raw distance, so every
client ends up in a cluster.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from .base import ClusterAssignment, as_matrix

# floor on merge distances; keeps lambda = 1/d finite for duplicate points
MIN_DISTANCE = 1e-12


@dataclass
class CondensedTree:
    """Rows ``(parent, child, lambda, size)``; ids below ``n_points`` are points."""

    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray
    size: np.ndarray
    n_points: int

    @property
    def root(self) -> int:
        return self.n_points

    def clusters(self) -> list[int]:
        kids = self.child[self.size > 1].tolist() if self.child.size else []
        return [self.root] + sorted(int(c) for c in kids)

    def child_clusters(self, c: int) -> list[int]:
        mask = (self.parent == c) & (self.child >= self.n_points)
        return sorted(int(x) for x in self.child[mask])

    def birth(self, c: int) -> float:
        if c == self.root:
            return 0.0
        return float(self.lam[self.child == c][0])


@dataclass
class HDBSCANResult:
    labels: np.ndarray  # -1 marks noise before post-assignment
    core_distances: np.ndarray
    mst: np.ndarray
    linkage: np.ndarray
    tree: CondensedTree
    stability: dict[int, float]
    selected: list[int]


def core_distances(dist: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbour, counting the point itself."""
    return np.sort(dist, axis=1)[:, k - 1]


def mutual_reachability(dist: np.ndarray, core: np.ndarray) -> np.ndarray:
    mr = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """scipy-style linkage rows ``(a, b, distance, size)`` from MST edges."""
    order = np.argsort(mst[:, 2], kind="stable")
    parent = list(range(2 * n - 1))
    size = [1] * n + [0] * (n - 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    out = np.zeros((n - 1, 4))
    for step, e in enumerate(order):
        a, b, w = int(mst[e, 0]), int(mst[e, 1]), float(mst[e, 2])
        ra, rb = find(a), find(b)
        node = n + step
        parent[ra] = node
        parent[rb] = node
        size[node] = size[ra] + size[rb]
        out[step] = (min(ra, rb), max(ra, rb), w, size[node])
    return out


def condense_tree(linkage: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    root = 2 * n - 2
    sizes = np.ones(2 * n - 1, dtype=np.int64)
    if n > 1:
        sizes[n:] = linkage[:, 3].astype(np.int64)

    def kids(node):
        row = linkage[node - n]
        return int(row[0]), int(row[1]), float(row[2])

    def leaves(node):
        stack, out = [node], []
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                a, b, _ = kids(x)
                stack.extend((a, b))
        return sorted(out)

    rows = []
    relabel = {root: n}
    next_label = n + 1
    queue = deque([root] if n > 1 else [])
    while queue:
        node = queue.popleft()
        left, right, d = kids(node)
        lam = 1.0 / max(d, MIN_DISTANCE)
        here = relabel[node]
        big_l = sizes[left] >= min_cluster_size
        big_r = sizes[right] >= min_cluster_size
        if big_l and big_r:
            for c in (left, right):
                relabel[c] = next_label
                next_label += 1
                rows.append((here, relabel[c], lam, int(sizes[c])))
                queue.append(c)
            continue
        for c, big in ((left, big_l), (right, big_r)):
            if big:
                relabel[c] = here
                queue.append(c)
            else:
                rows.extend((here, p, lam, 1) for p in leaves(c))
    arr = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return CondensedTree(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
                         arr[:, 2], arr[:, 3].astype(np.int64), n)


def stabilities(tree: CondensedTree) -> dict[int, float]:
    """Stability of every cluster: sum over its members of (lambda_out - lambda_birth)."""
    out = {}
    for c in tree.clusters():
        born = tree.birth(c)
        mask = tree.parent == c
        out[c] = float(np.sum((tree.lam[mask] - born) * tree.size[mask]))
    return out


def select_clusters(tree: CondensedTree, stability: dict[int, float],
                    allow_single_cluster: bool = True) -> list[int]:
    clusters = tree.clusters()
    chosen = {c: True for c in clusters}
    score = dict(stability)
    for c in sorted(clusters, reverse=True):
        children = tree.child_clusters(c)
        subtree = sum(score[ch] for ch in children)
        if c == tree.root and not allow_single_cluster:
            chosen[c] = False
            continue
        if subtree > score[c]:
            chosen[c] = False
            score[c] = subtree
        else:
            stack = list(children)
            while stack:
                x = stack.pop()
                chosen[x] = False
                stack.extend(tree.child_clusters(x))
    return sorted(c for c, v in chosen.items() if v)


def _label_points(tree: CondensedTree, selected: list[int]) -> np.ndarray:
    up = {int(ch): int(p) for p, ch in zip(tree.parent, tree.child) if ch >= tree.n_points}
    rank = {c: i for i, c in enumerate(selected)}
    labels = np.full(tree.n_points, -1, dtype=np.int64)
    point_rows = tree.child < tree.n_points
    for p, pt in zip(tree.parent[point_rows], tree.child[point_rows]):
        c = int(p)
        while c not in rank and c in up:
            c = up[c]
        if c in rank:
            labels[pt] = rank[c]
    return labels


def attach_noise(dist: np.ndarray, labels: np.ndarray) -> np.ndarray:
    out = labels.copy()
    found = sorted(set(labels[labels >= 0].tolist()))
    if not found:
        return np.zeros_like(labels)
    noise = np.flatnonzero(labels < 0)
    for i in noise:
        means = [dist[i, labels == c].mean() for c in found]
        out[i] = found[int(np.argmin(means))]
    return out


def hdbscan_tree(gamma, min_cluster_size: int, allow_single_cluster: bool = True) -> HDBSCANResult:
    d, _ = as_matrix(gamma)
    n = d.shape[0]
    if not 2 <= min_cluster_size <= n:
        raise ValueError(f"min_cluster_size must lie in [2, {n}], got {min_cluster_size}")
    core = core_distances(d, min_cluster_size)
    mst = _kernels.mutual_reachability_mst(d, core)
    link = single_linkage(mst, n)
    tree = condense_tree(link, n, min_cluster_size)
    stab = stabilities(tree)
    selected = select_clusters(tree, stab, allow_single_cluster)
    labels = _label_points(tree, selected)
    return HDBSCANResult(labels, core, mst, link, tree, stab, selected)


def hdbscan(gamma, min_cluster_size: int, allow_single_cluster: bool = True) -> ClusterAssignment:
    d, ids = as_matrix(gamma)
    result = hdbscan_tree(d, min_cluster_size, allow_single_cluster)
    labels = attach_noise(d, result.labels)
    return ClusterAssignment.from_labels(ids, labels, "hdbscan")


def min_cluster_size_for(n: int, fraction: float) -> int:
    return int(min(n, max(2, round(fraction * n))))
