"""Gradient-space geometry: flattening, cosine divergence and temperature.

The clustering temperature of a divergence matrix ``G`` of order ``n`` is
``||G||_p / lam`` with ``lam = (n (n - 1) 2**p) ** (1/p)``, the p-norm of the
matrix whose off-diagonal entries are all 2. It is therefore bounded by
``[0, 1]``.
"""
from __future__ import annotations

import csv
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels

TRIGGER_MODES = ("prose", "literal")


class DegenerateDeltaError(ValueError):
    """A delta with zero norm; cosine distance is undefined for it."""


@dataclass(frozen=True)
class ParameterVector:
    """A flat parameter vector plus the per-layer shapes it came from."""

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, ...]], ...]

    def __post_init__(self):
        expected = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in self.layout)
        if self.values.ndim != 1 or self.values.shape[0] != expected:
            raise ValueError(
                f"values has shape {self.values.shape}, layout needs ({expected},)"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(np.asarray(values, dtype=np.float64), self.layout)


@dataclass(frozen=True)
class DeltaVector:
    client_id: int
    round: int
    values: ParameterVector


@dataclass(frozen=True)
class DivergenceMatrix:
    entries: np.ndarray
    client_index: tuple[int, ...]

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def restrict(self, client_ids: Sequence[int]) -> "DivergenceMatrix":
        pos = {c: i for i, c in enumerate(self.client_index)}
        idx = [pos[c] for c in client_ids]
        return DivergenceMatrix(self.entries[np.ix_(idx, idx)].copy(), tuple(client_ids))


def flatten(tensor_set: Mapping[str, np.ndarray]) -> ParameterVector:
    """Concatenate layers row-major, in the mapping's iteration order."""
    if not tensor_set:
        raise ValueError("tensor_set is empty")
    parts = []
    layout = []
    for name, tensor in tensor_set.items():
        arr = np.asarray(tensor, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"layer {name!r} contains non-finite entries")
        parts.append(arr.ravel(order="C"))
        layout.append((name, tuple(int(s) for s in arr.shape)))
    return ParameterVector(np.concatenate(parts), tuple(layout))


def unflatten(vector: ParameterVector) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in vector.layout:
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = vector.values[offset : offset + size].reshape(shape).copy()
        offset += size
    return out


def _as_array(v) -> np.ndarray:
    if isinstance(v, ParameterVector):
        return v.values
    if isinstance(v, DeltaVector):
        return v.values.values
    return np.asarray(v, dtype=np.float64)


def cosine_distance(u, v) -> float:
    a, b = _as_array(u), _as_array(v)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateDeltaError("degenerate delta: zero-norm vector")
    d = 1.0 - float(a @ b) / (na * nb)
    return min(max(d, 0.0), 2.0)


def build_divergence_matrix(deltas: Sequence[DeltaVector]) -> DivergenceMatrix:
    """Pairwise cosine distances between client deltas, in input order."""
    if len(deltas) < 2:
        raise ValueError(f"need at least 2 deltas, got {len(deltas)}")
    layout = deltas[0].values.layout
    for d in deltas:
        if d.values.layout != layout:
            raise ValueError(f"client {d.client_id}: delta layout differs from client "
                             f"{deltas[0].client_id}")
    x = np.stack([d.values.values for d in deltas])
    norms = np.linalg.norm(x, axis=1)
    for d, nrm in zip(deltas, norms):
        if nrm == 0.0:
            raise DegenerateDeltaError(f"degenerate delta: client {d.client_id} has zero norm")
    entries = _kernels.cosine_divergence(x)
    return DivergenceMatrix(entries, tuple(d.client_id for d in deltas))


def divergence_from_vectors(x: np.ndarray, client_ids: Sequence[int] | None = None) -> DivergenceMatrix:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ids = tuple(range(x.shape[0])) if client_ids is None else tuple(client_ids)
    layout = (("delta", (x.shape[1],)),)
    return build_divergence_matrix(
        [DeltaVector(c, 0, ParameterVector(row.copy(), layout)) for c, row in zip(ids, x)]
    )


def matrix_p_norm(gamma, p: float = 2.0) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    g = gamma.entries if isinstance(gamma, DivergenceMatrix) else np.asarray(gamma, dtype=np.float64)
    a = np.abs(g).ravel()
    if p == 2.0:
        return float(np.sqrt(np.sum(a * a)))
    return float(np.sum(a**p) ** (1.0 / p))


def scaling_lambda(n: int, p: float = 2.0) -> float:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return float((n * (n - 1) * 2.0**p) ** (1.0 / p))


def temperature(gamma: DivergenceMatrix, p: float = 2.0) -> float:
    t = matrix_p_norm(gamma, p) / scaling_lambda(gamma.order, p)
    # rounding in the entrywise sum can put the maximal case a hair above 1
    return min(t, 1.0)


@dataclass(frozen=True)
class TemperatureTrace:
    """Per-round temperatures and the one-shot trigger state.

    In ``"prose"`` mode round 0 only records a baseline and the trigger is
    the first ``t >= 1`` with ``T_t >= T_{t-1}``. ``"literal"`` mode starts
    from ``T_{-1} = -inf`` and therefore fires on the first recorded round.
    An unarmed trace only records values.
    """

    p: float = 2.0
    mode: str = "prose"
    armed: bool = True
    per_round: tuple[tuple[int, float], ...] = ()
    trigger_round: int | None = None
    fired_at: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        if self.mode not in TRIGGER_MODES:
            raise ValueError(f"unknown trigger mode {self.mode!r}")

    @property
    def fired(self) -> bool:
        return self.trigger_round is not None

    @property
    def rounds(self) -> list[int]:
        return [r for r, _ in self.per_round]

    @property
    def values(self) -> list[float]:
        return [t for _, t in self.per_round]


def update_trace(trace: TemperatureTrace, round: int, t_value: float) -> TemperatureTrace:
    if trace.per_round and round <= trace.per_round[-1][0]:
        raise ValueError(f"round {round} does not follow last recorded round "
                         f"{trace.per_round[-1][0]}")
    if not (0.0 <= t_value <= 1.0) or math.isnan(t_value):
        raise ValueError(f"temperature {t_value} outside [0, 1]")
    trigger = trace.trigger_round
    if trigger is None and trace.armed:
        if trace.per_round:
            previous = trace.per_round[-1][1]
            if round >= 1 and t_value >= previous:
                trigger = round
        elif trace.mode == "literal":
            trigger = round
    return replace(
        trace,
        per_round=trace.per_round + ((round, float(t_value)),),
        trigger_round=trigger,
        fired_at=trace.fired_at + (trigger is not None,),
    )


def write_temperature_csv(trace: TemperatureTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "temperature", "fired"])
        for (r, t), fired in zip(trace.per_round, trace.fired_at):
            w.writerow([r, f"{t:.17g}", int(fired)])


def read_temperature_csv(path: str | Path, p: float = 2.0) -> TemperatureTrace:
    rows = []
    fired = []
    trigger = None
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            r = int(rec["round"])
            rows.append((r, float(rec["temperature"])))
            f = rec["fired"] == "1"
            if f and trigger is None:
                trigger = r
            fired.append(f)
    return TemperatureTrace(p=p, per_round=tuple(rows), trigger_round=trigger, fired_at=tuple(fired))
