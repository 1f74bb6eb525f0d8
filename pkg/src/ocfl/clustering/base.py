from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from ..divergence import DivergenceMatrix


@dataclass(frozen=True)
class ClusterAssignment:
    """Client id -> contiguous cluster label ``0..n_clusters-1``."""

    labels: Mapping[int, int]
    n_clusters: int
    method: str = ""

    def __post_init__(self):
        used = sorted(set(self.labels.values()))
        if used != list(range(self.n_clusters)) or self.n_clusters < 1:
            raise ValueError(f"labels {used} are not contiguous 0..{self.n_clusters - 1}")

    @classmethod
    def from_labels(cls, client_ids: Sequence[int], labels, method: str = "") -> "ClusterAssignment":
        """Build an assignment, renaming labels in order of first appearance."""
        rename: dict = {}
        out = {}
        for cid, lab in zip(client_ids, labels):
            lab = lab.item() if hasattr(lab, "item") else lab
            if lab not in rename:
                rename[lab] = len(rename)
            out[int(cid)] = rename[lab]
        return cls(out, len(rename), method)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], method: str = "") -> "ClusterAssignment":
        labels = {int(c): k for k, g in enumerate(groups) for c in g}
        return cls(dict(sorted(labels.items())), len(groups), method)

    @property
    def client_ids(self) -> list[int]:
        return sorted(self.labels)

    def groups(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_clusters)]
        for cid in sorted(self.labels):
            out[self.labels[cid]].append(cid)
        return out

    def vector(self, client_ids: Sequence[int] | None = None) -> np.ndarray:
        ids = self.client_ids if client_ids is None else client_ids
        return np.array([self.labels[c] for c in ids], dtype=np.int64)


def as_matrix(gamma) -> tuple[np.ndarray, tuple[int, ...]]:
    if isinstance(gamma, DivergenceMatrix):
        return gamma.entries, gamma.client_index
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {g.shape}")
    return g, tuple(range(g.shape[0]))


def single_cluster(client_ids: Sequence[int], method: str) -> ClusterAssignment:
    return ClusterAssignment({int(c): 0 for c in client_ids}, 1, method)
