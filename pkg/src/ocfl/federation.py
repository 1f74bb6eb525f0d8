"""Round loop, per-cluster aggregation and the clustering controllers.

Every client trains every round. Deltas are aggregated per cluster as
``theta_C <- theta_C + server_lr * mean(delta_i for i in C)``; with one
cluster and ``server_lr = 1`` this is FedAvg.

OCFL policies watch the temperature of the divergence matrix over all
clients and call their engine exactly once, on the first upturn. SCL splits
cohorts recursively by cosine bipartition whenever its norm gates open.
BCL clusters once, at a fixed round, by average linkage.
"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import ClusterAssignment, EngineConfig, cosine_bipartition, run_engine
from .clustering import agglomerative_average
from .datagen import ClientDataset, OrchestratorTestSet, PartitionPlan
from .divergence import (
    DeltaVector,
    DivergenceMatrix,
    ParameterVector,
    TemperatureTrace,
    build_divergence_matrix,
    temperature,
    update_trace,
)
from .metrics import ScoreSeries, performance_ledger, score_round
from .seeding import derive_rng
from .training import LocalReport, ModelSpec, TrainConfig, evaluate_f1, local_update

log = logging.getLogger(__name__)

METHODS = ("BNC", "SCL", "BCL", "OCFL-KM", "OCFL-AFF", "OCFL-MS", "OCFL-HDB")
OCFL_ENGINES = {
    "OCFL-KM": "kmeans",
    "OCFL-AFF": "affinity",
    "OCFL-MS": "meanshift",
    "OCFL-HDB": "hdbscan",
}


@dataclass(frozen=True)
class MethodPolicy:
    method: str
    engines: EngineConfig = field(default_factory=EngineConfig)
    p: float = 2.0
    trigger_mode: str = "prose"
    scl_e1: float = 0.35
    scl_e2: float = 0.35
    scl_min_rounds: int = 5
    bcl_clustering_round: int = 5
    bcl_distance_threshold: float = 0.2

    @property
    def is_ocfl(self) -> bool:
        return self.method in OCFL_ENGINES

    def validate(self, prefix: str = "policy") -> None:
        if self.method not in METHODS:
            raise ValueError(f"{prefix}.method: unknown method {self.method!r}")
        if self.p < 1:
            raise ValueError(f"{prefix}.p: must be >= 1")
        if self.method == "SCL":
            if not self.scl_e1 > 0:
                raise ValueError(f"{prefix}.scl.e1: must be > 0")
            if not self.scl_e2 > 0:
                raise ValueError(f"{prefix}.scl.e2: must be > 0")
            if self.scl_min_rounds < 0:
                raise ValueError(f"{prefix}.scl.min_rounds: must be >= 0")
        if self.method == "BCL":
            if self.bcl_clustering_round < 0:
                raise ValueError(f"{prefix}.bcl.clustering_round: must be >= 0")
            if not self.bcl_distance_threshold > 0:
                raise ValueError(f"{prefix}.bcl.distance_threshold: must be > 0")


@dataclass(frozen=True)
class FederationConfig:
    model: ModelSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    rounds: int = 30
    server_lr: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ClusterState:
    """Current cohorts and one model per cohort.

    ``trace`` is the population temperature trace; for non-OCFL methods it is
    unarmed telemetry that never triggers.
    """

    clusters: tuple[tuple[int, ...], ...]
    models: tuple[ParameterVector, ...]
    trace: TemperatureTrace
    bcl_done: bool = False

    def __post_init__(self):
        if len(self.clusters) != len(self.models):
            raise ValueError("one model per cluster required")
        ids = [c for g in self.clusters for c in g]
        if len(ids) != len(set(ids)):
            raise ValueError("clusters overlap")

    @classmethod
    def initial(cls, client_ids: Sequence[int], model: ParameterVector,
                policy: MethodPolicy) -> "ClusterState":
        trace = TemperatureTrace(p=policy.p, mode=policy.trigger_mode, armed=policy.is_ocfl)
        return cls((tuple(sorted(client_ids)),), (model,), trace)

    def assignment(self, method: str = "") -> ClusterAssignment:
        return ClusterAssignment.from_groups(self.clusters, method)

    def cluster_of(self) -> dict[int, int]:
        return {c: k for k, g in enumerate(self.clusters) for c in g}


@dataclass
class RoundRecord:
    round: int
    temperature: float | None
    fired: bool
    train_loss: dict[int, float]
    local_f1: dict[int, float]
    cluster_sizes: list[int]
    assignment: ClusterAssignment
    global_f1: dict[int, float]
    cluster_temperatures: dict[int, float | None] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    event: str | None = None
    error: str | None = None


class ExperimentError(RuntimeError):
    def __init__(self, message: str, records: list[RoundRecord], round: int):
        super().__init__(message)
        self.records = records
        self.round = round


def _population_temperature(deltas: Sequence[DeltaVector], p: float):
    gamma = build_divergence_matrix(deltas)
    return gamma, temperature(gamma, p)


def _norms(deltas: Sequence[DeltaVector]) -> tuple[float, float]:
    x = np.stack([d.values.values for d in deltas])
    return float(np.linalg.norm(x.mean(axis=0))), float(np.linalg.norm(x, axis=1).max())


def scl_controller(state: ClusterState, deltas: Sequence[DeltaVector], round: int,
                   e1: float, e2: float, min_rounds: int) -> ClusterState:
    """Split every cohort whose mean update is small while some member's update is large."""
    if round < min_rounds:
        return state
    by_id = {d.client_id: d for d in deltas}
    n_clients = sum(len(g) for g in state.clusters)
    total = len(state.clusters)
    clusters: list[tuple[int, ...]] = []
    models: list[ParameterVector] = []
    for group, model in zip(state.clusters, state.models):
        members = [by_id[c] for c in group]
        mean_norm, max_norm = _norms(members) if len(group) >= 2 else (0.0, 0.0)
        if len(group) >= 2 and mean_norm < e1 and max_norm > e2 and total < n_clients:
            total += 1
            gamma = build_divergence_matrix(members)
            part_a, part_b = cosine_bipartition(gamma)
            clusters += [tuple(part_a), tuple(part_b)]
            models += [model, model]
        else:
            clusters.append(group)
            models.append(model)
    return replace(state, clusters=tuple(clusters), models=tuple(models))


def bcl_controller(state: ClusterState, gamma: DivergenceMatrix, round: int,
                   clustering_round: int, distance_threshold: float) -> ClusterState:
    """Cluster the population once, at ``clustering_round``, by average linkage."""
    if round != clustering_round or state.bcl_done:
        return state
    assignment = agglomerative_average(gamma, distance_threshold)
    return _recluster(state, assignment, bcl_done=True)


def _recluster(state: ClusterState, assignment: ClusterAssignment, **changes) -> ClusterState:
    # new cohorts start from the model their members were just trained from
    old = state.cluster_of()
    groups = [tuple(g) for g in assignment.groups()]
    models = tuple(state.models[old[g[0]]] for g in groups)
    return replace(state, clusters=tuple(groups), models=models, **changes)


def aggregate(state: ClusterState, deltas: Sequence[DeltaVector], server_lr: float) -> ClusterState:
    by_id = {d.client_id: d for d in deltas}
    models = []
    for group, model in zip(state.clusters, state.models):
        g = np.stack([by_id[c].values.values for c in group]).mean(axis=0)
        models.append(model.with_values(model.values + server_lr * g))
    return replace(state, models=tuple(models))


def run_round(state: ClusterState, policy: MethodPolicy, datasets: Sequence[ClientDataset],
              orch: OrchestratorTestSet, cfg: FederationConfig, round: int,
              ground: PartitionPlan | None = None) -> tuple[ClusterState, RoundRecord]:
    owner = state.cluster_of()
    reports: list[LocalReport] = []
    for data in sorted(datasets, key=lambda d: d.client_id):
        start = state.models[owner[data.client_id]]
        rng = derive_rng(cfg.seed, "client", data.client_id, round)
        reports.append(local_update(start, cfg.model, data, cfg.train, rng, round))
    deltas = [r.delta for r in reports]

    gamma, t_pop = _population_temperature(deltas, policy.p)
    new = replace(state, trace=update_trace(state.trace, round, t_pop))
    event = None
    error = None
    if policy.is_ocfl:
        if not state.trace.fired and new.trace.fired:
            rng = derive_rng(cfg.seed, "engine", policy.method, round)
            try:
                assignment = run_engine(OCFL_ENGINES[policy.method], gamma, policy.engines, rng)
            except Exception as exc:  # noqa: BLE001 - any engine failure aborts the round
                log.warning("round %d: engine %s failed: %s", round, policy.method, exc)
                error = f"{type(exc).__name__}: {exc}"
            else:
                new = _recluster(new, assignment)
                event = f"oneshot:{assignment.method}:{assignment.n_clusters}"
    elif policy.method == "SCL":
        split = scl_controller(new, deltas, round, policy.scl_e1, policy.scl_e2,
                               policy.scl_min_rounds)
        if len(split.clusters) != len(new.clusters):
            event = f"scl_split:{len(split.clusters)}"
        new = split
    elif policy.method == "BCL":
        clustered = bcl_controller(new, gamma, round, policy.bcl_clustering_round,
                                   policy.bcl_distance_threshold)
        if clustered is not new:
            event = f"bcl:{len(clustered.clusters)}"
        new = clustered

    if error is not None:
        record = RoundRecord(round, t_pop, state.trace.fired, {}, {},
                             [len(g) for g in state.clusters], state.assignment(policy.method),
                             {}, event=None, error=error)
        if ground is not None:
            record.scores = score_round(ground, record.assignment)
        return state, record

    new = aggregate(new, deltas, cfg.server_lr)

    cluster_t: dict[int, float | None] = {}
    if len(new.clusters) > 1:
        by_id = {d.client_id: d for d in deltas}
        for k, group in enumerate(new.clusters):
            if len(group) >= 2:
                cluster_t[k] = temperature(build_divergence_matrix([by_id[c] for c in group]),
                                           policy.p)
            else:
                cluster_t[k] = None
    global_f1 = {
        k: evaluate_f1(model, cfg.model, orch.features, orch.labels)
        for k, model in enumerate(new.models)
    }
    assignment = new.assignment(policy.method)
    record = RoundRecord(
        round=round,
        temperature=t_pop,
        fired=new.trace.fired if policy.is_ocfl else False,
        train_loss={r.client_id: r.train_loss for r in reports},
        local_f1={r.client_id: r.local_f1 for r in reports},
        cluster_sizes=[len(g) for g in new.clusters],
        assignment=assignment,
        global_f1=global_f1,
        cluster_temperatures=cluster_t,
        event=event,
    )
    if ground is not None:
        record.scores = score_round(ground, assignment)
    return new, record


@dataclass
class ExperimentResult:
    method: str
    records: list[RoundRecord]
    state: ClusterState
    plan: PartitionPlan

    @property
    def trace(self) -> TemperatureTrace:
        return self.state.trace

    def series(self) -> ScoreSeries:
        return ScoreSeries.from_scores([r.round for r in self.records],
                                       [r.scores for r in self.records])

    def summary(self) -> dict:
        trace = self.state.trace
        final = self.state.assignment(self.method)
        scored = [r for r in self.records if r.scores]
        post = None
        if trace.trigger_round is not None:
            post = [r.scores for r in scored if r.round >= trace.trigger_round]
        out = {
            "method": self.method,
            "rounds": len(self.records),
            "trigger_round": trace.trigger_round if self.method in OCFL_ENGINES else None,
            "fired": bool(trace.fired) if self.method in OCFL_ENGINES else False,
            "n_clusters": final.n_clusters,
            "clusters": [list(g) for g in self.state.clusters],
            "ground_truth": [list(self.plan.clients_of_cluster[k])
                             for k in sorted(self.plan.clients_of_cluster)],
            "events": [{"round": r.round, "event": r.event} for r in self.records if r.event],
            "errors": [{"round": r.round, "error": r.error} for r in self.records if r.error],
            "mean_scores": self.series().means() if scored else None,
            "final_scores": scored[-1].scores if scored else None,
            "post_trigger_rand": (float(np.mean([s["rand"] for s in post])) if post else None),
        }
        try:
            out["ledger"] = performance_ledger(self.records).to_dict()
        except ValueError:
            out["ledger"] = None
        return out


def run_federation(policy: MethodPolicy, plan: PartitionPlan, datasets: Sequence[ClientDataset],
                   orch: OrchestratorTestSet, cfg: FederationConfig,
                   init: ParameterVector) -> ExperimentResult:
    """Run ``cfg.rounds`` rounds from ``init``; failures carry the records so far."""
    state = ClusterState.initial([d.client_id for d in datasets], init, policy)
    records: list[RoundRecord] = []
    for t in range(cfg.rounds):
        try:
            state, record = run_round(state, policy, datasets, orch, cfg, t, plan)
        except Exception as exc:
            raise ExperimentError(f"round {t}: {type(exc).__name__}: {exc}", records, t) from exc
        records.append(record)
    return ExperimentResult(policy.method, records, state, plan)
