import json

import numpy as np
import pytest

from ocfl.datagen import (
    ClassModel,
    DataGenDistribution,
    SplitConfig,
    build_partition,
    cluster_sizes,
    largest_remainder,
    read_xy,
    sample_dirichlet,
    synth_sample,
    write_partition,
)

KINDS = ["non_overlapping_balanced", "overlapping_balanced",
         "non_overlapping_imbalanced", "overlapping_imbalanced"]


def _build(seed=0, **kw):
    return build_partition(SplitConfig(**kw), np.random.default_rng(seed))


class TestDirichlet:
    def test_k_one(self, rng):
        assert sample_dirichlet(1.0, 1, rng).tolist() == [1.0]

    def test_sums_to_one(self, rng):
        for alpha in (0.05, 1.0, 20.0):
            for k in (2, 3, 10):
                w = sample_dirichlet(alpha, k, rng)
                assert abs(w.sum() - 1) <= 1e-12 and np.all(w >= 0)

    def test_monte_carlo_mean(self, rng):
        draws = np.stack([sample_dirichlet(1.0, 3, rng) for _ in range(10_000)])
        np.testing.assert_allclose(draws.mean(axis=0), [1 / 3] * 3, atol=0.02)

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_rejects_alpha(self, rng, alpha):
        with pytest.raises(ValueError):
            sample_dirichlet(alpha, 3, rng)

    def test_rejects_k(self, rng):
        with pytest.raises(ValueError):
            sample_dirichlet(1.0, 0, rng)


class TestPartition:
    def test_balanced_fifteen(self):
        plan, datasets, _ = _build()
        assert [len(v) for v in plan.clients_of_cluster.values()] == [5, 5, 5]
        sets = [set(d.class_support) for d in plan.distributions]
        assert all(not (a & b) for i, a in enumerate(sets) for b in sets[i + 1:])
        assert [d.class_support for d in plan.distributions] == [(0, 1, 2, 3), (4, 5, 6),
                                                                  (7, 8, 9)]

    def test_imbalanced_thirty_sizes(self):
        plan, _, _ = _build(n_clients=30, split_kind="non_overlapping_imbalanced")
        assert [len(v) for v in plan.clients_of_cluster.values()] == [6, 14, 10]

    def test_largest_remainder(self):
        assert largest_remainder([0.2, 0.47, 0.33], 30) == [6, 14, 10]
        assert largest_remainder([0.2, 0.47, 0.33], 15) == [3, 7, 5]
        assert sum(largest_remainder([1, 1, 1], 10)) == 10

    def test_other_cluster_counts_cover_everyone(self, rng):
        cfg = SplitConfig(n_clients=12, n_clusters=4, split_kind="non_overlapping_imbalanced")
        sizes = cluster_sizes(cfg, rng)
        assert sum(sizes) == 12 and min(sizes) >= 1

    @pytest.mark.parametrize("kind", ["overlapping_balanced", "overlapping_imbalanced"])
    def test_overlap(self, kind):
        plan, _, _ = _build(split_kind=kind)
        sets = [set(d.class_support) for d in plan.distributions]
        pairs = [(a, b) for i, a in enumerate(sets) for b in sets[i + 1:]]
        assert any(a & b for a, b in pairs)
        assert all(a != b for a, b in pairs)

    @pytest.mark.parametrize("kind", KINDS)
    def test_invariants(self, kind):
        plan, datasets, orch = _build(seed=3, n_clients=30, split_kind=kind)
        owner = plan.cluster_of_client()
        assert sorted(owner) == list(range(30))
        assert sorted(plan.cluster_of_dist.values()) == sorted(plan.cluster_of_dist)
        seen = set()
        for d in datasets:
            support = set(plan.distributions[d.source_dist].class_support)
            assert d.source_dist == plan.cluster_of_dist[owner[d.client_id]]
            for x, y in (d.train, d.test):
                assert len(y) > 0 and set(y.tolist()) <= support
                assert x.shape == (len(y), 16)
                seen |= set(y.tolist())
            assert not np.any(np.all(d.train[0][:, None, :] == d.test[0][None, :, :], axis=2))
        union = set().union(*[d.class_support for d in plan.distributions])
        assert seen == union
        hist = np.bincount(orch.labels)
        assert hist.max() - hist.min() <= 1

    def test_shared_class_models_identical(self):
        plan, _, _ = _build(split_kind="overlapping_balanced")
        shared = set(plan.distributions[0].class_support) & set(plan.distributions[1].class_support)
        for c in shared:
            a = plan.distributions[0].class_models[c]
            b = plan.distributions[1].class_models[c]
            assert a is b
            assert np.array_equal(a.mean, b.mean) and a.scale == b.scale

    def test_reproducible(self):
        a = _build(seed=9, split_kind="overlapping_imbalanced")
        b = _build(seed=9, split_kind="overlapping_imbalanced")
        for da, db in zip(a[1], b[1]):
            assert np.array_equal(da.train[0], db.train[0])
            assert np.array_equal(da.test[1], db.test[1])
        assert a[0].clients_of_cluster == b[0].clients_of_cluster
        assert np.array_equal(a[2].features, b[2].features)

    def test_cluster_label_skew_shares_law(self):
        plan, datasets, _ = _build(split_kind="non_overlapping_imbalanced")
        for members in plan.clients_of_cluster.values():
            laws = {tuple(datasets[c].label_weights) for c in members}
            assert len(laws) == 1

    def test_client_label_skew_draws_per_client(self):
        plan, datasets, _ = _build(split_kind="non_overlapping_imbalanced", label_skew="client")
        members = plan.clients_of_cluster[1]
        laws = {tuple(datasets[c].label_weights) for c in members}
        assert len(laws) == len(members)

    def test_homogeneous(self):
        plan, datasets, _ = _build(n_clusters=1, split_kind="homogeneous")
        assert plan.clients_of_cluster == {0: list(range(15))}
        assert plan.distributions[0].class_support == tuple(range(10))

    @pytest.mark.parametrize("kw, field", [
        (dict(n_clients=2), "n_clients"),
        (dict(n_clusters=1), "n_clusters"),
        (dict(alpha=0.0), "alpha"),
        (dict(split_kind="zigzag"), "split_kind"),
        (dict(n_classes=2), "n_classes"),
        (dict(supports=[[0, 1], [], [2]]), "supports"),
        (dict(supports=[[0, 1], [1, 2], [3]]), "supports"),
        (dict(split_kind="overlapping_balanced", supports=[[0], [1], [2]]), "supports"),
        (dict(split_kind="overlapping_balanced", supports=[[0, 9], [0, 9], [2]]), "supports"),
    ])
    def test_rejections(self, kw, field):
        with pytest.raises(ValueError, match=f"data.{field}"):
            _build(**kw)


class TestSynthSample:
    def _dist(self, scale):
        models = {c: ClassModel(c, np.full(3, float(c)), scale) for c in (2, 5)}
        return DataGenDistribution(0, (2, 5), models)

    def test_sigma_zero(self, rng):
        x, y = synth_sample(self._dist(0.0), [0.5, 0.5], 50, rng)
        for row, label in zip(x, y):
            assert np.array_equal(row, np.full(3, float(label)))

    def test_one_hot(self, rng):
        _, y = synth_sample(self._dist(1.0), [0.0, 1.0], 100, rng)
        assert set(y.tolist()) == {5}

    def test_frequency(self, rng):
        _, y = synth_sample(self._dist(1.0), [0.5, 0.5], 10_000, rng)
        assert abs(np.mean(y == 2) - 0.5) <= 0.02

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError, match="length"):
            synth_sample(self._dist(1.0), [1.0], 5, rng)


def test_write_partition(tmp_path):
    plan, datasets, orch = _build(seed=1)
    files = write_partition(tmp_path, plan, datasets, orch)
    assert len(files) == 15 * 2 + 2
    manifest = json.loads((tmp_path / "partition.json").read_text())
    assert manifest["split_kind"] == "non_overlapping_balanced"
    assert manifest["client_cluster"] == {str(c): k for c, k in plan.labels().items()}
    assert manifest["sample_counts"]["0"] == {"train": 200, "test": 50}
    header = (tmp_path / "client_0_train.csv").read_text().splitlines()[0]
    assert header == "label," + ",".join(f"f{j}" for j in range(16))
    x, y = read_xy(tmp_path / "client_3_test.csv")
    assert np.array_equal(x, datasets[3].test[0]) and np.array_equal(y, datasets[3].test[1])


def test_reserve_guarantees_classes(rng):
    models = {c: ClassModel(c, np.zeros(2), 1.0) for c in (0, 1, 2)}
    dist = DataGenDistribution(0, (0, 1, 2), models)
    _, y = synth_sample(dist, [1.0, 0.0, 0.0], 5, rng, reserve=(1, 2))
    assert sorted(y.tolist()) == [0, 0, 0, 1, 2]


def test_too_few_samples_to_cover():
    with pytest.raises(ValueError, match="data.train_per_client"):
        _build(n_clients=3, train_per_client=2)
