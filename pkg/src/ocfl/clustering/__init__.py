"""Partitioning engines applied to a client divergence matrix.

Distance-native engines (HDBSCAN, agglomerative, bipartition) read the
matrix as precomputed distances; K-means and mean shift read its rows as
Euclidean points; affinity propagation uses similarities ``-gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityConfig, affinity_propagation
from .agglomerative import agglomerative_average, average_linkage_merges
from .base import ClusterAssignment, as_matrix, single_cluster
from .bipartition import cosine_bipartition, max_cross_similarity
from .hdbscan import hdbscan, hdbscan_tree, min_cluster_size_for
from .kmeans import kmeans, kmeans_on_gamma
from .meanshift import estimate_bandwidth, mean_shift

ENGINES = ("kmeans", "meanshift", "hdbscan", "affinity", "agglomerative")


@dataclass(frozen=True)
class EngineConfig:
    kmeans_k: int = 3
    meanshift_bandwidth: float | None = None
    meanshift_policy: str = "knn"
    meanshift_min_support_fraction: float = 0.2
    hdbscan_min_cluster_size_fraction: float = 0.2
    hdbscan_allow_single_cluster: bool = True
    affinity: AffinityConfig = field(default_factory=AffinityConfig)
    agglomerative_distance_threshold: float = 0.2


def run_engine(name: str, gamma, cfg: EngineConfig, rng: np.random.Generator) -> ClusterAssignment:
    g, _ = as_matrix(gamma)
    if name == "kmeans":
        return kmeans_on_gamma(gamma, min(cfg.kmeans_k, g.shape[0]), rng)
    if name == "meanshift":
        support = min_cluster_size_for(g.shape[0], cfg.meanshift_min_support_fraction)
        return mean_shift(gamma, cfg.meanshift_bandwidth, rng, policy=cfg.meanshift_policy,
                          min_support=support)
    if name == "hdbscan":
        mcs = min_cluster_size_for(g.shape[0], cfg.hdbscan_min_cluster_size_fraction)
        return hdbscan(gamma, mcs, cfg.hdbscan_allow_single_cluster)
    if name == "affinity":
        return affinity_propagation(gamma, cfg.affinity, rng)
    if name == "agglomerative":
        return agglomerative_average(gamma, cfg.agglomerative_distance_threshold)
    raise ValueError(f"unknown engine {name!r}")


__all__ = [
    "AffinityConfig",
    "ClusterAssignment",
    "ENGINES",
    "EngineConfig",
    "affinity_propagation",
    "agglomerative_average",
    "average_linkage_merges",
    "cosine_bipartition",
    "estimate_bandwidth",
    "hdbscan",
    "hdbscan_tree",
    "kmeans",
    "kmeans_on_gamma",
    "max_cross_similarity",
    "mean_shift",
    "min_cluster_size_for",
    "run_engine",
    "single_cluster",
]
