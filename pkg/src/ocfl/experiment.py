"""Experiment driver and artifact persistence.

Seeds: the datagen stream is ``derive_rng(seed, "datagen")``, the shared
initial model comes from ``derive_rng(seed, "init")``; clients and engines
derive their own streams inside the round loop. Every method of a sweep
therefore sees the same partition and the same starting point.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, ExperimentConfig, check_policy
from .datagen import ClientDataset, OrchestratorTestSet, PartitionPlan, build_partition
from .divergence import TemperatureTrace, write_temperature_csv
from .federation import (
    ExperimentError,
    ExperimentResult,
    FederationConfig,
    RoundRecord,
    run_federation,
)
from .idx import load_idx
from .seeding import derive_rng
from .training import init_model

RUN_FILES = ("rounds.csv", "clusters.csv", "temperature.csv", "clustering.csv", "ledger.json")


@dataclass(frozen=True)
class PreparedData:
    plan: PartitionPlan
    datasets: list[ClientDataset]
    orch: OrchestratorTestSet


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    pool = None
    if cfg.source == "idx":
        pool = load_idx(cfg.idx.images, cfg.idx.labels)
        if pool[0].shape[1] != cfg.data.n_features:
            raise ConfigError(f"data.n_features: IDX images have {pool[0].shape[1]} pixels, "
                              f"config says {cfg.data.n_features}")
    plan, datasets, orch = build_partition(cfg.data, derive_rng(cfg.seed, "datagen"),
                                           pool=pool, seed=cfg.seed)
    return PreparedData(plan, datasets, orch)


def run_method(cfg: ExperimentConfig, method: str, data: PreparedData) -> ExperimentResult:
    spec = cfg.model_spec()
    init = init_model(spec, derive_rng(cfg.seed, "init"))
    fed = FederationConfig(spec, cfg.train, cfg.rounds, cfg.server_lr, cfg.seed)
    policy = check_policy(cfg, method)
    return run_federation(policy, data.plan, data.datasets, data.orch, fed, init)


# ------------------------------------------------------------ persistence


def fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{float(v):.17g}"


def _writer(path: Path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def trace_from_records(records: list[RoundRecord], p: float = 2.0) -> TemperatureTrace:
    rows = tuple((r.round, float(r.temperature)) for r in records if r.temperature is not None)
    fired = tuple(bool(r.fired) for r in records if r.temperature is not None)
    trigger = next((r for (r, _), f in zip(rows, fired) if f), None)
    return TemperatureTrace(p=p, armed=False, per_round=rows, trigger_round=trigger,
                            fired_at=fired)


def write_records(out: Path, method: str, records: list[RoundRecord], p: float = 2.0) -> None:
    """Write the four per-round CSVs for one method."""
    out.mkdir(parents=True, exist_ok=True)
    fh, w = _writer(out / "rounds.csv")
    with fh:
        w.writerow(["round", "client_id", "cluster_id", "train_loss", "local_f1"])
        for r in records:
            owner = r.assignment.labels
            for cid in sorted(r.train_loss):
                w.writerow([r.round, cid, owner[cid], fmt(r.train_loss[cid]),
                            fmt(r.local_f1[cid])])
    fh, w = _writer(out / "clusters.csv")
    with fh:
        w.writerow(["round", "cluster_id", "size", "global_f1"])
        for r in records:
            for k, size in enumerate(r.cluster_sizes):
                w.writerow([r.round, k, size, fmt(r.global_f1.get(k))])
    write_temperature_csv(trace_from_records(records, p), out / "temperature.csv")
    fh, w = _writer(out / "clustering.csv")
    with fh:
        w.writerow(["round", "rand", "ami", "completeness"])
        for r in records:
            if r.scores:
                w.writerow([r.round, fmt(r.scores["rand"]), fmt(r.scores["ami"]),
                            fmt(r.scores["completeness"])])


def write_result(out: Path, cfg: ExperimentConfig, result: ExperimentResult) -> dict:
    write_records(out, result.method, result.records, cfg.p)
    summary = result.summary()
    summary["seed"] = cfg.seed
    _dump_json(out / "summary.json", summary)
    _dump_json(out / "ledger.json", {result.method: summary["ledger"]})
    return summary


def write_failure(out: Path, cfg: ExperimentConfig, method: str, exc: Exception) -> dict:
    """Flush whatever telemetry exists and describe the failure in error.json."""
    records = exc.records if isinstance(exc, ExperimentError) else []
    write_records(out, method, records, cfg.p)
    payload = {
        "method": method,
        "round": exc.round if isinstance(exc, ExperimentError) else None,
        "error": str(exc),
        "type": type(exc).__name__,
        "completed_rounds": len(records),
    }
    _dump_json(out / "error.json", payload)
    _dump_json(out / "ledger.json", {method: None})
    return payload


def run_and_write(cfg: ExperimentConfig, out_dir: str | Path,
                  methods: tuple[str, ...] | None = None,
                  data: PreparedData | None = None) -> dict[str, dict]:
    """Run each method into ``out_dir/<method>``; returns summaries or failure payloads.

    A failure in one method is recorded and does not stop the others.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg) if data is None else data
    results: dict[str, dict] = {}
    for method in methods or cfg.methods:
        target = out / method
        target.mkdir(parents=True, exist_ok=True)
        try:
            result = run_method(cfg, method, data)
        except (ExperimentError, ValueError) as exc:
            results[method] = {"failed": True, **write_failure(target, cfg, method, exc)}
            continue
        results[method] = write_result(target, cfg, result)
    _dump_json(out / "ledger.json", {
        m: (None if s.get("failed") else s["ledger"]) for m, s in results.items()
    })
    return results


FAILURE = "---"


def write_comparison(path: Path, results: dict[str, dict]) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["method", "mean_rand", "mean_ami", "mean_com", "PF1", "GF1", "DIST"])
        for method, s in results.items():
            if s.get("failed") or s.get("ledger") is None or s.get("mean_scores") is None:
                w.writerow([method] + [FAILURE] * 6)
                continue
            ms, led = s["mean_scores"], s["ledger"]
            w.writerow([method, fmt(ms["rand"]), fmt(ms["ami"]), fmt(ms["completeness"]),
                        fmt(led["PF1"]), fmt(led["GF1"]), fmt(led["DIST"])])


# -------------------------------------------------------------- plot data


def plot_data(run_dir: str | Path) -> list[Path]:
    """Long-format (series, x, y) CSVs derived from one method's telemetry."""
    run = Path(run_dir)
    missing = [f for f in RUN_FILES if not (run / f).is_file()]
    if missing:
        raise FileNotFoundError("missing telemetry: " + ", ".join(missing))
    written = []

    fh, w = _writer(run / "fig_temperature.csv")
    with fh:
        w.writerow(["series", "x", "y"])
        with open(run / "temperature.csv", newline="", encoding="utf-8") as src:
            for row in csv.DictReader(src):
                w.writerow(["temperature", row["round"], row["temperature"]])
    written.append(run / "fig_temperature.csv")

    fh, w = _writer(run / "fig_scores.csv")
    with fh:
        w.writerow(["series", "x", "y"])
        with open(run / "clustering.csv", newline="", encoding="utf-8") as src:
            rows = list(csv.DictReader(src))
        for series in ("rand", "ami", "completeness"):
            for row in rows:
                w.writerow([series, row["round"], row[series]])
    written.append(run / "fig_scores.csv")

    ledger = json.loads((run / "ledger.json").read_text(encoding="utf-8"))
    fh, w = _writer(run / "fig_ledger.csv")
    with fh:
        w.writerow(["series", "x", "y"])
        for series in ("PF1", "GF1", "DIST"):
            for method in sorted(ledger):
                if ledger[method] is not None:
                    w.writerow([series, method, fmt(ledger[method][series])])
    written.append(run / "fig_ledger.csv")
    return written


def tree_digest(root: str | Path) -> dict[str, str]:
    """Relative path -> BLAKE2b hex digest for every file under ``root``."""
    root = Path(root)
    out = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        out[str(path.relative_to(root))] = hashlib.blake2b(path.read_bytes()).hexdigest()
    return out


__all__ = [
    "FAILURE",
    "PreparedData",
    "RUN_FILES",
    "plot_data",
    "prepare_data",
    "run_and_write",
    "run_method",
    "trace_from_records",
    "tree_digest",
    "write_comparison",
    "write_failure",
    "write_records",
    "write_result",
]
