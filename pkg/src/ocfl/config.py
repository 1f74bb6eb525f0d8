"""Experiment configuration: strict JSON in, validated dataclasses out.

Unknown keys are rejected and every error names the offending field as a
dotted path (``data.alpha``, ``engines.hdbscan.min_cluster_size_fraction``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .clustering import AffinityConfig, EngineConfig
from .datagen import SplitConfig
from .divergence import TRIGGER_MODES
from .federation import METHODS, MethodPolicy
from .training import MODEL_KINDS, ModelSpec, TrainConfig

SOURCES = ("synthetic", "idx")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


@dataclass(frozen=True)
class IdxPaths:
    images: str
    labels: str


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: SplitConfig = field(default_factory=SplitConfig)
    source: str = "synthetic"
    idx: IdxPaths | None = None
    model_kind: str = "logreg"
    hidden_units: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)
    rounds: int = 30
    server_lr: float = 1.0
    p: float = 2.0
    trigger_mode: str = "prose"
    methods: tuple[str, ...] = ("OCFL-HDB",)
    engines: EngineConfig = field(default_factory=EngineConfig)
    scl_e1: float = 0.35
    scl_e2: float = 0.35
    scl_min_rounds: int = 5
    bcl_clustering_round: int = 5
    output_dir: str | None = None

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.model_kind, self.data.n_features, self.data.n_classes,
                         self.hidden_units)

    def policy(self, method: str) -> MethodPolicy:
        return MethodPolicy(
            method=method,
            engines=self.engines,
            p=self.p,
            trigger_mode=self.trigger_mode,
            scl_e1=self.scl_e1,
            scl_e2=self.scl_e2,
            scl_min_rounds=self.scl_min_rounds,
            bcl_clustering_round=self.bcl_clustering_round,
            bcl_distance_threshold=self.engines.agglomerative_distance_threshold,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


# ---------------------------------------------------------------- parsing


def _take(obj, path: str, allowed: dict[str, type | tuple]) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"{where}: unknown field")
    out = {}
    for key, value in obj.items():
        where = f"{path}.{key}" if path else key
        out[key] = _typed(value, allowed[key], where)
    return out


def _typed(value, kind, where: str):
    if kind is dict:
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if kind == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if kind == "real?":
        return None if value is None else _typed(value, "real", where)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if kind == "str?":
        return None if value is None else _typed(value, "str", where)
    if kind == "strs":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{where}: expected a list of strings")
        return tuple(value)
    if kind == "supports":
        if value is None:
            return None
        ok = isinstance(value, list) and all(
            isinstance(s, list) and all(isinstance(c, int) and not isinstance(c, bool) for c in s)
            for s in value
        )
        if not ok:
            raise ConfigError(f"{where}: expected a list of integer lists")
        return [list(s) for s in value]
    raise AssertionError(kind)


_DATA = {
    "source": "str", "n_clients": "int", "n_clusters": "int", "split_kind": "str",
    "alpha": "real", "n_classes": "int", "n_features": "int", "n_shared": "int",
    "sigma": "real", "spread": "real", "train_per_client": "int", "test_per_client": "int",
    "orchestrator_test_size": "int", "supports": "supports", "label_skew": "str", "idx": dict,
}
_MODEL = {"kind": "str", "hidden_units": "int"}
_TRAIN = {"local_epochs": "int", "batch_size": "int", "learning_rate": "real"}
_ENGINES = {"kmeans": dict, "meanshift": dict, "hdbscan": dict, "affinity": dict,
            "agglomerative": dict, "bipartition": dict, "bcl": dict}
_TOP = {
    "seed": "int", "data": dict, "model": dict, "train": dict, "rounds": "int",
    "server_lr": "real", "p": "real", "trigger_mode": "str", "methods": "strs",
    "engines": dict, "output_dir": "str?",
}


def parse_config(obj: dict, check_methods: bool = True) -> ExperimentConfig:
    """Build and validate a config from decoded JSON.

    With ``check_methods=False`` per-method parameters are left for the
    caller to check, so a sweep can isolate one misconfigured method.
    """
    top = _take(obj, "", _TOP)
    base = ExperimentConfig()
    kw: dict = {}
    for key in ("seed", "rounds", "server_lr", "p", "trigger_mode", "output_dir"):
        if key in top:
            kw[key] = top[key]
    if "methods" in top:
        kw["methods"] = top["methods"]

    data = dict(_take(top.get("data", {}), "data", _DATA))
    if "source" in data:
        kw["source"] = data.pop("source")
    if "idx" in data:
        paths = _take(data.pop("idx"), "data.idx", {"images": "str", "labels": "str"})
        missing = [k for k in ("images", "labels") if k not in paths]
        if missing:
            raise ConfigError(f"data.idx.{missing[0]}: required")
        kw["idx"] = IdxPaths(**paths)
    kw["data"] = SplitConfig(**data)

    model = _take(top.get("model", {}), "model", _MODEL)
    if "kind" in model:
        kw["model_kind"] = model["kind"]
    if "hidden_units" in model:
        kw["hidden_units"] = model["hidden_units"]

    train = _take(top.get("train", {}), "train", _TRAIN)
    kw["train"] = TrainConfig(**train)

    engines = _take(top.get("engines", {}), "engines", _ENGINES)
    kw.update(_parse_engines(engines, base))

    cfg = replace(base, **kw)
    validate(cfg, check_methods)
    return cfg


def _parse_engines(engines: dict, base: ExperimentConfig) -> dict:
    e = {}
    out: dict = {}
    if "kmeans" in engines:
        km = _take(engines["kmeans"], "engines.kmeans", {"k": "int"})
        if "k" in km:
            e["kmeans_k"] = km["k"]
    if "meanshift" in engines:
        ms = _take(engines["meanshift"], "engines.meanshift",
                   {"bandwidth": "real?", "policy": "str", "min_support_fraction": "real"})
        if "bandwidth" in ms:
            e["meanshift_bandwidth"] = ms["bandwidth"]
        if "policy" in ms:
            e["meanshift_policy"] = ms["policy"]
        if "min_support_fraction" in ms:
            e["meanshift_min_support_fraction"] = ms["min_support_fraction"]
    if "hdbscan" in engines:
        hd = _take(engines["hdbscan"], "engines.hdbscan",
                   {"min_cluster_size_fraction": "real", "allow_single_cluster": "bool"})
        if "min_cluster_size_fraction" in hd:
            e["hdbscan_min_cluster_size_fraction"] = hd["min_cluster_size_fraction"]
        if "allow_single_cluster" in hd:
            e["hdbscan_allow_single_cluster"] = hd["allow_single_cluster"]
    if "affinity" in engines:
        af = _take(engines["affinity"], "engines.affinity",
                   {"damping": "real", "max_iter": "int", "convergence_iter": "int",
                    "preference": "real?"})
        e["affinity"] = replace(AffinityConfig(), **af)
    if "agglomerative" in engines:
        ag = _take(engines["agglomerative"], "engines.agglomerative",
                   {"distance_threshold": "real", "linkage": "str"})
        if ag.get("linkage", "average") != "average":
            raise ConfigError("engines.agglomerative.linkage: only 'average' is supported")
        if "distance_threshold" in ag:
            e["agglomerative_distance_threshold"] = ag["distance_threshold"]
    if "bipartition" in engines:
        bp = _take(engines["bipartition"], "engines.bipartition",
                   {"e1": "real", "e2": "real", "min_rounds": "int"})
        for k in ("e1", "e2", "min_rounds"):
            if k in bp:
                out[f"scl_{k}"] = bp[k]
    if "bcl" in engines:
        bc = _take(engines["bcl"], "engines.bcl", {"clustering_round": "int"})
        if "clustering_round" in bc:
            out["bcl_clustering_round"] = bc["clustering_round"]
    out["engines"] = replace(base.engines, **e)
    return out


def validate(cfg: ExperimentConfig, check_methods: bool = True) -> None:
    """Check every downstream precondition; raise :class:`ConfigError`."""
    try:
        cfg.data.validate("data")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.source not in SOURCES:
        raise ConfigError(f"data.source: must be one of {', '.join(SOURCES)}")
    if cfg.source == "idx" and cfg.idx is None:
        raise ConfigError("data.idx: required when data.source is 'idx'")
    if cfg.model_kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind: must be one of {', '.join(MODEL_KINDS)}")
    if cfg.hidden_units < 1:
        raise ConfigError("model.hidden_units: must be >= 1")
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    if cfg.rounds < 0:
        raise ConfigError("rounds: must be >= 0")
    if not cfg.server_lr > 0:
        raise ConfigError("server_lr: must be > 0")
    if cfg.p < 1:
        raise ConfigError("p: must be >= 1")
    if cfg.trigger_mode not in TRIGGER_MODES:
        raise ConfigError(f"trigger_mode: must be one of {', '.join(TRIGGER_MODES)}")
    if not cfg.methods:
        raise ConfigError("methods: at least one method is required")
    for i, m in enumerate(cfg.methods):
        if m not in METHODS:
            raise ConfigError(f"methods[{i}]: unknown method {m!r}; "
                              f"choose from {', '.join(METHODS)}")
    if len(set(cfg.methods)) != len(cfg.methods):
        raise ConfigError("methods: duplicate entries")
    _validate_engines(cfg, check_methods)


def _validate_engines(cfg: ExperimentConfig, check_methods: bool) -> None:
    e = cfg.engines
    n = cfg.data.n_clients
    if not 2 <= e.kmeans_k <= n:
        raise ConfigError(f"engines.kmeans.k: must be in [2, n_clients={n}]")
    if e.meanshift_bandwidth is not None and not e.meanshift_bandwidth > 0:
        raise ConfigError("engines.meanshift.bandwidth: must be > 0")
    if e.meanshift_policy not in ("knn", "median"):
        raise ConfigError("engines.meanshift.policy: must be 'knn' or 'median'")
    if not 0 < e.meanshift_min_support_fraction <= 1:
        raise ConfigError("engines.meanshift.min_support_fraction: must be in (0, 1]")
    if not 0 < e.hdbscan_min_cluster_size_fraction <= 1:
        raise ConfigError("engines.hdbscan.min_cluster_size_fraction: must be in (0, 1]")
    a = e.affinity
    if not 0.5 <= a.damping < 1:
        raise ConfigError("engines.affinity.damping: must be in [0.5, 1)")
    if a.max_iter < 1:
        raise ConfigError("engines.affinity.max_iter: must be >= 1")
    if a.convergence_iter < 1:
        raise ConfigError("engines.affinity.convergence_iter: must be >= 1")
    if not e.agglomerative_distance_threshold > 0:
        raise ConfigError("engines.agglomerative.distance_threshold: must be > 0")
    for m in cfg.methods if check_methods else ():
        check_policy(cfg, m)


def check_policy(cfg: ExperimentConfig, method: str) -> MethodPolicy:
    """The validated policy for ``method``; errors use config field names."""
    policy = cfg.policy(method)
    try:
        policy.validate("engines")
    except ValueError as exc:
        msg = str(exc).replace("engines.scl.", "engines.bipartition.")
        raise ConfigError(msg) from None
    return policy


def load_config(path: str | Path, check_methods: bool = True) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(obj, check_methods)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """The JSON form of ``cfg``; ``parse_config(config_to_dict(c)) == c``."""
    d = cfg.data
    data = {f.name: getattr(d, f.name) for f in fields(d)}
    data["source"] = cfg.source
    if cfg.idx is not None:
        data["idx"] = {"images": cfg.idx.images, "labels": cfg.idx.labels}
    e = cfg.engines
    a = e.affinity
    return {
        "seed": cfg.seed,
        "data": data,
        "model": {"kind": cfg.model_kind, "hidden_units": cfg.hidden_units},
        "train": {"local_epochs": cfg.train.local_epochs, "batch_size": cfg.train.batch_size,
                  "learning_rate": cfg.train.learning_rate},
        "rounds": cfg.rounds,
        "server_lr": cfg.server_lr,
        "p": cfg.p,
        "trigger_mode": cfg.trigger_mode,
        "methods": list(cfg.methods),
        "engines": {
            "kmeans": {"k": e.kmeans_k},
            "meanshift": {"bandwidth": e.meanshift_bandwidth, "policy": e.meanshift_policy,
                          "min_support_fraction": e.meanshift_min_support_fraction},
            "hdbscan": {"min_cluster_size_fraction": e.hdbscan_min_cluster_size_fraction,
                        "allow_single_cluster": e.hdbscan_allow_single_cluster},
            "affinity": {"damping": a.damping, "max_iter": a.max_iter,
                         "convergence_iter": a.convergence_iter, "preference": a.preference},
            "agglomerative": {"distance_threshold": e.agglomerative_distance_threshold,
                              "linkage": "average"},
            "bipartition": {"e1": cfg.scl_e1, "e2": cfg.scl_e2, "min_rounds": cfg.scl_min_rounds},
            "bcl": {"clustering_round": cfg.bcl_clustering_round},
        },
        "output_dir": cfg.output_dir,
    }
