"""Partition agreement scores and the personalisation/generalisation ledger.

All agreement scores take two labelings of the same clients, either as
:class:`ClusterAssignment` objects or as equal-length label sequences.
Logarithms are natural.
"""
from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .clustering.base import ClusterAssignment


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # true clusters x predicted clusters

    @cached_property
    def rows(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @cached_property
    def cols(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @cached_property
    def n(self) -> int:
        return int(self.counts.sum())

    def cells(self) -> list[tuple[int, int, int]]:
        """Nonzero cells as ``(i, j, n_ij)`` Python ints."""
        return [(int(i), int(j), int(self.counts[i, j])) for i, j in zip(*np.nonzero(self.counts))]


def _labels(true_p, pred_p) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(true_p, ClusterAssignment) or isinstance(pred_p, ClusterAssignment):
        if not (isinstance(true_p, ClusterAssignment) and isinstance(pred_p, ClusterAssignment)):
            raise TypeError("mix of ClusterAssignment and raw labels")
        if set(true_p.labels) != set(pred_p.labels):
            raise ValueError("partitions cover different client sets")
        ids = true_p.client_ids
        return true_p.vector(ids), pred_p.vector(ids)
    a = np.asarray(true_p)
    b = np.asarray(pred_p)
    if a.shape != b.shape:
        raise ValueError("partitions cover different client sets")
    return a, b


def contingency(true_p, pred_p) -> ContingencyTable:
    a, b = _labels(true_p, pred_p)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    shape = (ai.max(initial=-1) + 1, bi.max(initial=-1) + 1)
    flat = np.bincount(ai * shape[1] + bi, minlength=shape[0] * shape[1])
    counts = flat.reshape(shape).astype(np.int64)
    return ContingencyTable(counts)


def _comb2(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(x * (x - 1) / 2.0))


def adjusted_rand(true_p, pred_p) -> float:
    t = contingency(true_p, pred_p)
    n = t.n
    index = _comb2(t.counts)
    sum_a, sum_b = _comb2(t.rows), _comb2(t.cols)
    total = n * (n - 1) / 2.0
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def entropy(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_information(t: ContingencyTable) -> float:
    n = t.n
    a, b = t.rows.tolist(), t.cols.tolist()
    mi = 0.0
    for i, j, nij in t.cells():
        mi += nij / n * math.log(n * nij / (a[i] * b[j]))
    return float(mi)


def expected_mutual_information(t: ContingencyTable) -> float:
    """Expected MI under the hypergeometric (permutation) model."""
    n = int(t.n)
    a = [int(x) for x in t.rows]
    b = [int(x) for x in t.cols]
    lg = math.lgamma
    emi = 0.0
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if lo > hi:
                continue
            const = lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1) - lg(n + 1)
            for nij in range(lo, hi + 1):
                log_p = const - (lg(nij + 1) + lg(ai - nij + 1) + lg(bj - nij + 1)
                                 + lg(n - ai - bj + nij + 1))
                emi += nij / n * math.log(n * nij / (ai * bj)) * math.exp(log_p)
    return emi


def _same_partition(t: ContingencyTable) -> bool:
    c = t.counts
    return bool(np.all((c > 0).sum(axis=0) == 1) and np.all((c > 0).sum(axis=1) == 1))


def adjusted_mutual_information(true_p, pred_p) -> float:
    """AMI with the arithmetic-mean entropy normaliser."""
    t = contingency(true_p, pred_p)
    if _same_partition(t):
        return 1.0
    hu, hv = entropy(t.rows), entropy(t.cols)
    mi = mutual_information(t)
    emi = expected_mutual_information(t)
    denom = (hu + hv) / 2.0 - emi
    eps = np.finfo(np.float64).eps
    denom = min(denom, -eps) if denom < 0 else max(denom, eps)
    return float((mi - emi) / denom)


def completeness(true_p, pred_p) -> float:
    """``1 - H(pred | true) / H(pred)``; 1 when the prediction is a single cluster."""
    t = contingency(true_p, pred_p)
    h_pred = entropy(t.cols)
    if h_pred == 0.0:
        return 1.0
    n = t.n
    rows = t.rows.tolist()
    h_cond = 0.0
    for i, _, nij in t.cells():
        h_cond -= nij / n * math.log(nij / rows[i])
    return float(1.0 - h_cond / h_pred)


def score_round(ground, current: ClusterAssignment) -> dict[str, float]:
    """RAND (adjusted), AMI and completeness of ``current`` against the ground truth.

    ``ground`` is a :class:`~ocfl.datagen.PartitionPlan` or an assignment.
    """
    if not isinstance(ground, ClusterAssignment):
        lab = ground.labels()
        ground = ClusterAssignment(lab, len(set(lab.values())), "ground_truth")
    return {
        "rand": adjusted_rand(ground, current),
        "ami": adjusted_mutual_information(ground, current),
        "completeness": completeness(ground, current),
    }


@dataclass
class ScoreSeries:
    rounds: list[int]
    rand: list[float]
    ami: list[float]
    completeness: list[float]

    @classmethod
    def from_scores(cls, rounds: Sequence[int], scores: Sequence[dict]) -> "ScoreSeries":
        return cls(list(rounds), [s["rand"] for s in scores], [s["ami"] for s in scores],
                   [s["completeness"] for s in scores])

    def means(self) -> dict[str, float]:
        if not self.rounds:
            return {"rand": float("nan"), "ami": float("nan"), "completeness": float("nan")}
        return {
            "rand": float(np.mean(self.rand)),
            "ami": float(np.mean(self.ami)),
            "completeness": float(np.mean(self.completeness)),
        }


@dataclass(frozen=True)
class PerformanceLedger:
    pf1: float
    gf1: float

    @property
    def dist(self) -> float:
        return abs(self.pf1 - self.gf1)

    def to_dict(self) -> dict[str, float]:
        return {"PF1": self.pf1, "GF1": self.gf1, "DIST": self.dist}


def performance_ledger(records) -> PerformanceLedger:
    """PF1 over every (client, round); GF1 per round over cluster models, then over rounds.

    Each record needs ``local_f1`` (client id -> F1) and ``global_f1``
    (cluster id -> F1) mappings.
    """
    records = [r for r in records if r.local_f1]
    if not records:
        raise ValueError("no round records to summarise")
    local = [f for r in records for f in r.local_f1.values()]
    per_round = [float(np.mean(list(r.global_f1.values()))) for r in records if r.global_f1]
    return PerformanceLedger(float(np.mean(local)), float(np.mean(per_round)))


def write_ledger(path, ledgers: dict[str, PerformanceLedger | None]) -> None:
    payload = {m: (None if l is None else l.to_dict()) for m, l in ledgers.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
