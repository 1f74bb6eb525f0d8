"""Ground-truth clustered client populations.

Each cluster owns one data-generating distribution (a class support plus a
per-class feature model) and a set of clients. Shared classes point to the
same class model in every distribution, so ``p(x | y)`` agrees on overlaps and
clusters differ only in ``p(y)``.
"""
from __future__ import annotations

import csv
import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLIT_KINDS = (
    "non_overlapping_balanced",
    "overlapping_balanced",
    "non_overlapping_imbalanced",
    "overlapping_imbalanced",
    "homogeneous",
)
PAPER_SHARES = (0.20, 0.47, 0.33)
LABEL_SKEWS = ("cluster", "client")


@dataclass
class SplitConfig:
    n_clients: int = 15
    n_clusters: int = 3
    split_kind: str = "non_overlapping_balanced"
    alpha: float = 1.0
    n_classes: int = 10
    n_features: int = 16
    n_shared: int = 2
    sigma: float = 0.35
    spread: float = 1.0
    train_per_client: int = 200
    test_per_client: int = 50
    orchestrator_test_size: int = 500
    supports: list[list[int]] | None = None
    label_skew: str = "cluster"

    @property
    def overlapping(self) -> bool:
        return self.split_kind.startswith("overlapping")

    @property
    def imbalanced(self) -> bool:
        return self.split_kind.endswith("imbalanced")

    def validate(self, prefix: str = "data") -> None:
        def bad(name, msg):
            raise ValueError(f"{prefix}.{name}: {msg}")

        if self.split_kind not in SPLIT_KINDS:
            bad("split_kind", f"must be one of {', '.join(SPLIT_KINDS)}")
        if self.split_kind == "homogeneous":
            if self.n_clusters != 1:
                bad("n_clusters", "homogeneous split needs exactly 1 cluster")
        elif self.n_clusters < 2:
            bad("n_clusters", "must be >= 2")
        if self.n_clients < self.n_clusters:
            bad("n_clients", f"must be >= n_clusters ({self.n_clusters})")
        if not self.alpha > 0:
            bad("alpha", "must be > 0")
        if self.label_skew not in LABEL_SKEWS:
            bad("label_skew", f"must be one of {', '.join(LABEL_SKEWS)}")
        if self.sigma < 0:
            bad("sigma", "must be >= 0")
        if self.n_features < 1:
            bad("n_features", "must be >= 1")
        if self.train_per_client < 1:
            bad("train_per_client", "must be >= 1")
        if self.test_per_client < 1:
            bad("test_per_client", "must be >= 1")
        if self.orchestrator_test_size < 1:
            bad("orchestrator_test_size", "must be >= 1")
        if self.supports is None:
            exclusive = self.n_classes - (self.n_shared if self.overlapping else 0)
            if self.overlapping and self.n_shared < 1:
                bad("n_shared", "overlapping splits need at least one shared class")
            if exclusive < self.n_clusters:
                bad("n_classes", f"{self.n_classes} classes cannot give {self.n_clusters} "
                                 f"non-empty supports")
        else:
            if len(self.supports) != self.n_clusters:
                bad("supports", f"need {self.n_clusters} supports, got {len(self.supports)}")
            if any(len(s) == 0 for s in self.supports):
                bad("supports", "empty class support")
            if any(c < 0 or c >= self.n_classes for s in self.supports for c in s):
                bad("supports", f"class labels must lie in [0, {self.n_classes})")
            sets = [frozenset(s) for s in self.supports]
            pairs = [(a, b) for i, a in enumerate(sets) for b in sets[i + 1 :]]
            if self.split_kind.startswith("non_overlapping") and any(a & b for a, b in pairs):
                bad("supports", "non-overlapping split with intersecting supports")
            if self.overlapping:
                if not any(a & b for a, b in pairs):
                    bad("supports", "overlapping split needs at least one shared class")
                if any(a == b for a, b in pairs):
                    bad("supports", "two clusters have identical supports")


@dataclass(frozen=True)
class ClassModel:
    """Isotropic Gaussian feature model of one class."""

    label: int
    mean: np.ndarray
    scale: float

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((n, self.mean.shape[0]))
        return self.mean + self.scale * noise


class ClassPool:
    """Samples of one class read from files, handed out without replacement."""

    def __init__(self, label: int, features: np.ndarray):
        self.label = label
        self.features = features
        self.cursor = 0

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.cursor + n > self.features.shape[0]:
            raise ValueError(
                f"class {self.label}: pool exhausted ({self.features.shape[0]} samples)"
            )
        out = self.features[self.cursor : self.cursor + n]
        self.cursor += n
        return out.copy()


@dataclass
class DataGenDistribution:
    dist_id: int
    class_support: tuple[int, ...]
    class_models: dict

    def __post_init__(self):
        if not self.class_support:
            raise ValueError(f"distribution {self.dist_id}: empty class support")


@dataclass
class ClientDataset:
    client_id: int
    train: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    source_dist: int
    label_weights: np.ndarray = field(repr=False, default=None)


@dataclass
class OrchestratorTestSet:
    features: np.ndarray
    labels: np.ndarray


@dataclass
class PartitionPlan:
    distributions: list[DataGenDistribution]
    cluster_of_dist: dict[int, int]
    clients_of_cluster: dict[int, list[int]]
    split_kind: str
    alpha: float
    seed: int | None = None

    @property
    def n_clients(self) -> int:
        return sum(len(v) for v in self.clients_of_cluster.values())

    def cluster_of_client(self) -> dict[int, int]:
        return {c: k for k, members in self.clients_of_cluster.items() for c in members}

    def labels(self) -> dict[int, int]:
        """Ground-truth cluster label per client, keyed by client id."""
        return dict(sorted(self.cluster_of_client().items()))


def sample_dirichlet(alpha: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Dirichlet draw via normalised Gamma variates."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return np.ones(1)
    g = rng.gamma(alpha, 1.0, size=k)
    total = g.sum()
    if total == 0.0:  # every variate underflowed (tiny alpha)
        g = np.zeros(k)
        g[int(rng.integers(k))] = 1.0
        return g
    return g / total


def largest_remainder(shares: Sequence[float], total: int) -> list[int]:
    """Integer apportionment of ``total`` by ``shares``; ties go to the lower index."""
    shares = np.asarray(shares, dtype=np.float64)
    raw = shares / shares.sum() * total
    base = np.floor(raw + 1e-9).astype(int)
    rem = raw - base
    short = total - int(base.sum())
    order = sorted(range(len(shares)), key=lambda i: (-rem[i], i))
    for i in order[:short]:
        base[i] += 1
    return base.tolist()


def default_supports(cfg: SplitConfig) -> list[list[int]]:
    if cfg.supports is not None:
        return [sorted(s) for s in cfg.supports]
    if cfg.split_kind == "homogeneous":
        return [list(range(cfg.n_classes))]
    shared = list(range(cfg.n_classes - cfg.n_shared, cfg.n_classes)) if cfg.overlapping else []
    exclusive = list(range(cfg.n_classes - len(shared)))
    chunks = np.array_split(np.array(exclusive), cfg.n_clusters)
    return [sorted(chunk.tolist() + shared) for chunk in chunks]


def cluster_sizes(cfg: SplitConfig, rng: np.random.Generator) -> list[int]:
    k, n = cfg.n_clusters, cfg.n_clients
    if not cfg.imbalanced:
        return [n // k + (1 if i < n % k else 0) for i in range(k)]
    if k == 3:
        sizes = largest_remainder(PAPER_SHARES, n)
    else:
        shares = sample_dirichlet(cfg.alpha, k, rng)
        sizes = [1 + s for s in largest_remainder(shares, n - k)]
    if min(sizes) < 1:
        raise ValueError(f"data.n_clients: {n} clients give an empty cluster (sizes {sizes})")
    return sizes


def synth_sample(dist: DataGenDistribution, label_weights, n: int,
                 rng: np.random.Generator,
                 reserve: Sequence[int] = ()) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` labelled samples; every class in ``reserve`` appears at least once."""
    label_weights = np.asarray(label_weights, dtype=np.float64)
    if label_weights.shape != (len(dist.class_support),):
        raise ValueError(
            f"label_weights has length {label_weights.shape[0] if label_weights.ndim else 0}, "
            f"support has {len(dist.class_support)} classes"
        )
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(reserve) > n or any(c not in dist.class_support for c in reserve):
        raise ValueError(f"cannot reserve classes {list(reserve)} in {n} samples")
    support = np.asarray(dist.class_support)
    picks = rng.choice(len(support), size=n - len(reserve), p=label_weights / label_weights.sum())
    labels = np.concatenate([np.asarray(reserve, dtype=support.dtype), support[picks]])
    labels = labels[rng.permutation(n)]
    dim = next(iter(dist.class_models.values()))
    dim = dim.mean.shape[0] if isinstance(dim, ClassModel) else dim.features.shape[1]
    features = np.empty((n, dim))
    for c in dist.class_support:
        rows = np.flatnonzero(labels == c)
        if rows.size:
            features[rows] = dist.class_models[c].draw(rows.size, rng)
    return features, labels.astype(np.int64)


def _class_models(cfg: SplitConfig, rng, pool) -> dict:
    if pool is None:
        u = rng.standard_normal((cfg.n_classes, cfg.n_features))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return {c: ClassModel(c, cfg.spread * u[c], cfg.sigma) for c in range(cfg.n_classes)}
    features, labels = pool
    models = {}
    for c in range(cfg.n_classes):
        idx = np.flatnonzero(labels == c)
        models[c] = ClassPool(c, features[rng.permutation(idx)])
    return models


def build_partition(cfg: SplitConfig, rng: np.random.Generator, pool=None, seed=None):
    """Generate the plan, the client datasets and the orchestrator test set.

    ``pool`` is an optional ``(features, labels)`` pair (e.g. from
    :func:`ocfl.idx.load_idx`); without it features come from Gaussians.
    """
    cfg.validate()
    models = _class_models(cfg, rng, pool)
    supports = default_supports(cfg)
    distributions = [
        DataGenDistribution(k, tuple(s), {c: models[c] for c in s}) for k, s in enumerate(supports)
    ]
    cluster_of_dist = {k: k for k in range(cfg.n_clusters)}

    sizes = cluster_sizes(cfg, rng)
    perm = rng.permutation(cfg.n_clients)
    clients_of_cluster = {}
    start = 0
    for k, size in enumerate(sizes):
        clients_of_cluster[k] = sorted(int(c) for c in perm[start : start + size])
        start += size

    for k, members in clients_of_cluster.items():
        need = -(-len(distributions[cluster_of_dist[k]].class_support) // len(members))
        if cfg.train_per_client < need:
            raise ValueError(f"data.train_per_client: cluster {k} needs at least {need} "
                             f"samples per client to cover its classes")
    owner = {c: k for k, members in clients_of_cluster.items() for c in members}
    # "cluster" skew gives each distribution one Dir(alpha) label law shared by
    # its clients; "client" skew draws a fresh law per client.
    shared_weights = {}
    if cfg.imbalanced and cfg.label_skew == "cluster":
        for dist in distributions:
            shared_weights[dist.dist_id] = sample_dirichlet(cfg.alpha, len(dist.class_support), rng)
    datasets = []
    for cid in range(cfg.n_clients):
        dist = distributions[cluster_of_dist[owner[cid]]]
        m = len(dist.class_support)
        if not cfg.imbalanced:
            weights = np.full(m, 1.0 / m)
        elif cfg.label_skew == "cluster":
            weights = shared_weights[dist.dist_id]
        else:
            weights = sample_dirichlet(cfg.alpha, m, rng)
        # spread the support round-robin over the cluster so every class shows up
        members = clients_of_cluster[owner[cid]]
        reserve = dist.class_support[members.index(cid)::len(members)]
        train = synth_sample(dist, weights, cfg.train_per_client, rng, reserve)
        test = synth_sample(dist, weights, cfg.test_per_client, rng)
        datasets.append(ClientDataset(cid, train, test, dist.dist_id, weights))

    classes = sorted(set().union(*[d.class_support for d in distributions]))
    per_class = largest_remainder([1.0] * len(classes), cfg.orchestrator_test_size)
    xs, ys = [], []
    for c, count in zip(classes, per_class):
        if count:
            xs.append(models[c].draw(count, rng))
            ys.append(np.full(count, c, dtype=np.int64))
    orch = OrchestratorTestSet(np.concatenate(xs), np.concatenate(ys))

    plan = PartitionPlan(distributions, cluster_of_dist, clients_of_cluster,
                         cfg.split_kind, cfg.alpha, seed)
    return plan, datasets, orch


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_xy(path: Path, x: np.ndarray, y: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(x.shape[1])])
        for row, label in zip(x, y):
            w.writerow([int(label)] + [_fmt(v) for v in row])


def read_xy(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:], data[:, 0].astype(np.int64)


def partition_manifest(plan: PartitionPlan, datasets: Sequence[ClientDataset]) -> dict:
    return {
        "split_kind": plan.split_kind,
        "alpha": plan.alpha,
        "seed": plan.seed,
        "supports": {str(k): list(d.class_support) for k, d in enumerate(plan.distributions)},
        "cluster_of_dist": {str(k): v for k, v in plan.cluster_of_dist.items()},
        "client_cluster": {str(c): k for c, k in plan.labels().items()},
        "sample_counts": {
            str(d.client_id): {"train": int(d.train[1].shape[0]), "test": int(d.test[1].shape[0])}
            for d in datasets
        },
        "label_weights": {str(d.client_id): [float(w) for w in d.label_weights] for d in datasets},
    }


def write_partition(out_dir, plan: PartitionPlan, datasets: Sequence[ClientDataset],
                    orch: OrchestratorTestSet) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = out / "partition.json"
    manifest.write_text(json.dumps(partition_manifest(plan, datasets), indent=2) + "\n",
                        encoding="utf-8")
    written.append(manifest)
    for d in datasets:
        for split, (x, y) in (("train", d.train), ("test", d.test)):
            path = out / f"client_{d.client_id}_{split}.csv"
            _write_xy(path, x, y)
            written.append(path)
    path = out / "orchestrator_test.csv"
    _write_xy(path, orch.features, orch.labels)
    written.append(path)
    return written
