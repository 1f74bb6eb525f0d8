from dataclasses import replace

import numpy as np
import pytest

import ocfl.federation as fed
from ocfl.clustering import EngineConfig
from ocfl.datagen import ClientDataset, SplitConfig, build_partition
from ocfl.divergence import DeltaVector, ParameterVector, divergence_from_vectors
from ocfl.federation import (
    ClusterState,
    ExperimentError,
    FederationConfig,
    MethodPolicy,
    bcl_controller,
    run_federation,
    run_round,
    scl_controller,
)
from ocfl.seeding import derive_rng
from ocfl.training import ModelSpec, TrainConfig, init_model, local_update


def _setup(seed=0, rounds=12, **data_kw):
    cfg = SplitConfig(**data_kw)
    plan, datasets, orch = build_partition(cfg, derive_rng(seed, "datagen"), seed=seed)
    spec = ModelSpec("logreg", cfg.n_features, cfg.n_classes)
    init = init_model(spec, derive_rng(seed, "init"))
    fc = FederationConfig(spec, TrainConfig(), rounds, 1.0, seed)
    return plan, datasets, orch, fc, init


def _run(method, setup, **policy_kw):
    plan, datasets, orch, fc, init = setup
    return run_federation(MethodPolicy(method, **policy_kw), plan, datasets, orch, fc, init)


@pytest.fixture(scope="module")
def default_setup():
    return _setup()


def _delta(cid, vec):
    v = np.asarray(vec, dtype=float)
    return DeltaVector(cid, 0, ParameterVector(v, (("v", v.shape),)))


def _state(groups, dim=2):
    model = ParameterVector(np.zeros(dim), (("v", (dim,)),))
    return ClusterState(tuple(tuple(g) for g in groups), tuple(model for _ in groups),
                        fed.TemperatureTrace(armed=False))


class TestRoundLoop:
    def test_bnc_never_clusters(self, default_setup):
        res = _run("BNC", default_setup)
        assert all(r.cluster_sizes == [15] for r in res.records)
        assert all(r.scores["rand"] == 0.0 for r in res.records)
        assert res.summary()["trigger_round"] is None

    def test_fedavg_bit_exact(self, default_setup):
        plan, datasets, orch, fc, init = default_setup
        policy = MethodPolicy("BNC")
        state = ClusterState.initial(range(15), init, policy)
        new, _ = run_round(state, policy, datasets, orch, fc, 0)
        deltas = [local_update(init, fc.model, d, fc.train, derive_rng(fc.seed, "client", d.client_id, 0)).delta
                  for d in datasets]
        expected = init.values + 1.0 * np.stack([d.values.values for d in deltas]).mean(axis=0)
        assert np.array_equal(new.models[0].values, expected)

    def test_kmeans_recovers_ground_truth(self, default_setup):
        res = _run("OCFL-KM", default_setup)
        s = res.summary()
        assert s["trigger_round"] is not None and 1 <= s["trigger_round"] <= 10
        truth = sorted(map(sorted, default_setup[0].clients_of_cluster.values()))
        assert sorted(map(sorted, s["clusters"])) == truth
        assert s["post_trigger_rand"] == 1.0

    @pytest.mark.parametrize("method", ["OCFL-KM", "OCFL-HDB", "OCFL-MS", "OCFL-AFF"])
    def test_one_shot(self, default_setup, method):
        res = _run(method, default_setup)
        changes = [r.round for prev, r in zip(res.records, res.records[1:])
                   if r.assignment.labels != prev.assignment.labels]
        trig = res.summary()["trigger_round"]
        assert len(changes) <= 1 and (not changes or changes[0] == trig)
        fired = [r.fired for r in res.records]
        assert fired == sorted(fired)
        for r in res.records:
            ids = sorted(c for g in r.assignment.groups() for c in g)
            assert ids == list(range(15))

    def test_homogeneous_identical_clients_stay_together(self, monkeypatch):
        rng = np.random.default_rng(0)
        x, y = rng.standard_normal((60, 4)), rng.integers(0, 3, 60)
        datasets = [ClientDataset(c, (x, y), (x[:20], y[:20]), 0) for c in range(6)]
        plan, _, orch = build_partition(SplitConfig(n_clients=6, n_clusters=1, n_features=4,
                                                    n_classes=3, split_kind="homogeneous"),
                                        np.random.default_rng(0))
        spec = ModelSpec("logreg", 4, 3)
        fc = FederationConfig(spec, TrainConfig(), 6, 1.0, 0)
        monkeypatch.setattr(fed, "derive_rng", lambda seed, *tags: np.random.default_rng(1))
        res = run_federation(MethodPolicy("OCFL-HDB"), plan, datasets, orch, fc,
                             init_model(spec, np.random.default_rng(2)))
        # the gram-based cosine leaves roundoff of order 1e-16 on identical rows
        assert all(r.temperature < 1e-12 for r in res.records)
        assert all(r.cluster_sizes == [6] for r in res.records)

    def test_cohort_isolation(self, default_setup):
        plan, datasets, orch, fc, init = default_setup
        policy = MethodPolicy("OCFL-KM")
        state = ClusterState.initial(range(15), init, policy)
        t = 0
        while not state.trace.fired:
            state, _ = run_round(state, policy, datasets, orch, fc, t, plan)
            t += 1
        assert len(state.clusters) == 3
        outsider = state.clusters[1][0]
        altered = list(datasets)
        x, y = datasets[outsider].train
        altered[outsider] = replace(datasets[outsider], train=(x[::-1] * 3.0, y[::-1]))
        a, b = state, state
        for r in range(t, t + 3):
            a, _ = run_round(a, policy, datasets, orch, fc, r, plan)
            b, _ = run_round(b, policy, altered, orch, fc, r, plan)
        assert np.array_equal(a.models[0].values, b.models[0].values)
        assert np.array_equal(a.models[2].values, b.models[2].values)
        assert not np.array_equal(a.models[1].values, b.models[1].values)

    def test_rounds_zero(self, default_setup):
        plan, datasets, orch, fc, init = default_setup
        res = run_federation(MethodPolicy("OCFL-HDB"), plan, datasets, orch,
                             replace(fc, rounds=0), init)
        s = res.summary()
        assert res.records == [] and s["rounds"] == 0 and s["n_clusters"] == 1
        assert s["ledger"] is None and np.array_equal(res.state.models[0].values, init.values)

    def test_deterministic(self, default_setup):
        a = _run("OCFL-HDB", default_setup).summary()
        b = _run("OCFL-HDB", default_setup).summary()
        assert a == b

    def test_engine_failure_leaves_state(self, default_setup, monkeypatch):
        def boom(*_a, **_k):
            raise RuntimeError("engine exploded")

        monkeypatch.setattr(fed, "run_engine", boom)
        res = _run("OCFL-HDB", default_setup)
        failed = [r for r in res.records if r.error]
        assert failed and "engine exploded" in failed[0].error
        assert failed[0].cluster_sizes == [15]
        assert res.summary()["errors"][0]["round"] == failed[0].round

    def test_round_errors_carry_records(self, default_setup):
        plan, datasets, orch, fc, init = default_setup
        bad = ParameterVector(np.zeros(3), (("v", (3,)),))
        with pytest.raises(ExperimentError) as info:
            run_federation(MethodPolicy("BNC"), plan, datasets, orch, fc, bad)
        assert info.value.round == 0 and info.value.records == []


class TestSCL:
    def test_guard_before_min_rounds(self):
        st = _state([[0, 1]])
        ds = [_delta(0, [1, 0]), _delta(1, [-1, 0])]
        assert scl_controller(st, ds, 2, 0.35, 0.35, 5) is st

    def test_identical_large_deltas(self):
        st = _state([[0, 1, 2]])
        ds = [_delta(c, [2.0, 0.0]) for c in range(3)]
        assert scl_controller(st, ds, 9, 0.35, 0.35, 0).clusters == st.clusters

    def test_antipodal_split_once(self):
        rng = np.random.default_rng(0)
        u = np.array([1.0, 0.0, 0.0])
        ids = list(range(8))
        signs = [1, -1, 1, 1, -1, -1, 1, -1]
        ds = [_delta(c, s * u + 0.01 * rng.standard_normal(3)) for c, s in zip(ids, signs)]
        for d in ds:
            d.values.values[:] /= np.linalg.norm(d.values.values)
        st = _state([ids], dim=3)
        one = scl_controller(st, ds, 5, 0.35, 0.35, 5)
        groups = sorted(map(sorted, one.clusters))
        assert groups == [[0, 2, 3, 6], [1, 4, 5, 7]]
        two = scl_controller(one, ds, 6, 0.35, 0.35, 5)
        assert two.clusters == one.clusters

    def test_end_to_end_runs(self, default_setup):
        s = _run("SCL", default_setup).summary()
        assert s["trigger_round"] is None and s["n_clusters"] >= 1


class TestBCL:
    def test_only_at_clustering_round(self):
        g, _ = divergence_from_vectors(np.eye(4)), None
        st = _state([[0, 1, 2, 3]])
        assert bcl_controller(st, g, 3, 5, 0.2) is st

    def test_block_recovery(self):
        x = np.array([[1, 0.01], [1, -0.01], [-0.01, 1], [0.01, 1]], dtype=float)
        st = _state([[0, 1, 2, 3]])
        out = bcl_controller(st, divergence_from_vectors(x), 5, 5, 0.2)
        assert sorted(map(sorted, out.clusters)) == [[0, 1], [2, 3]] and out.bcl_done
        assert bcl_controller(out, divergence_from_vectors(x), 5, 5, 0.2) is out

    def test_threshold_above_two_is_bnc(self, default_setup):
        bcl = _run("BCL", default_setup, bcl_distance_threshold=2.5)
        bnc = _run("BNC", default_setup)
        assert all(r.cluster_sizes == [15] for r in bcl.records)
        for a, b in zip(bcl.records, bnc.records):
            assert a.local_f1 == b.local_f1 and a.global_f1 == b.global_f1
        assert np.array_equal(bcl.state.models[0].values, bnc.state.models[0].values)


class TestPolicy:
    def test_unknown_method(self):
        with pytest.raises(ValueError, match="method"):
            MethodPolicy("OCFL-XYZ").validate()

    @pytest.mark.parametrize("kw", [dict(scl_e1=0.0), dict(scl_e2=-1.0), dict(scl_min_rounds=-1)])
    def test_scl_gates(self, kw):
        with pytest.raises(ValueError):
            MethodPolicy("SCL", **kw).validate()

    def test_bcl_threshold(self):
        with pytest.raises(ValueError):
            MethodPolicy("BCL", bcl_distance_threshold=0.0).validate()

    def test_engine_config_default(self):
        assert MethodPolicy("OCFL-HDB").engines == EngineConfig()
