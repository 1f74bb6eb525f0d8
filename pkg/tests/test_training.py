import math

import numpy as np
import pytest

from ocfl.datagen import ClientDataset
from ocfl.divergence import flatten, unflatten
from ocfl.training import (
    ModelSpec,
    TrainConfig,
    backward,
    forward_loss,
    init_model,
    local_update,
    macro_f1,
    predict,
)


def _batch(rng, n, d, c):
    return rng.standard_normal((n, d)), rng.integers(0, c, n)


def _dataset(rng, d=4, c=3, n_train=40, n_test=20):
    return ClientDataset(0, _batch(rng, n_train, d, c), _batch(rng, n_test, d, c), 0)


def _numeric_grad(values, spec, batch, eps=1e-5):
    out = np.empty_like(values)
    for i in range(values.size):
        up, down = values.copy(), values.copy()
        up[i] += eps
        down[i] -= eps
        out[i] = (forward_loss(up, spec, batch)[0] - forward_loss(down, spec, batch)[0]) / (2 * eps)
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    # the floor keeps coordinates near zero, where central-difference roundoff
    # (~1e-11 absolute) dominates, from reporting meaningless ratios
    return float(np.max(np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


class TestInit:
    def test_logreg_size(self):
        assert init_model(ModelSpec("logreg", 4, 3)).values.shape == (15,)

    def test_mlp_size(self):
        n = init_model(ModelSpec("mlp", 4, 3, hidden_units=8)).values.shape[0]
        assert n == 4 * 8 + 8 + 8 * 3 + 3 == 67

    def test_deterministic(self):
        spec = ModelSpec("mlp", 4, 3, hidden_units=8)
        a = init_model(spec, np.random.default_rng(3))
        b = init_model(spec, np.random.default_rng(3))
        assert np.array_equal(a.values, b.values)

    def test_ranges(self):
        spec = ModelSpec("mlp", 16, 3, hidden_units=8)
        t = unflatten(init_model(spec, np.random.default_rng(0)))
        assert np.all(np.abs(t["W1"]) <= 1 / 4) and np.all(np.abs(t["W2"]) <= 1 / math.sqrt(8))
        assert np.all(t["b1"] == 0) and np.all(t["b2"] == 0)

    @pytest.mark.parametrize("kw", [dict(kind="cnn"), dict(input_dim=0), dict(n_classes=1)])
    def test_rejects(self, kw):
        base = dict(kind="logreg", input_dim=4, n_classes=3)
        with pytest.raises(ValueError):
            ModelSpec(**{**base, **kw})


class TestLoss:
    @pytest.mark.parametrize("c", [2, 3, 10])
    def test_zero_params_uniform(self, rng, c):
        spec = ModelSpec("logreg", 5, c)
        loss, _ = forward_loss(np.zeros(spec.n_params), spec, _batch(rng, 7, 5, c))
        assert loss == pytest.approx(math.log(c), abs=1e-12)

    def test_saturated_correct(self):
        spec = ModelSpec("logreg", 3, 3)
        x = np.eye(3)
        params = flatten({"W": 1e3 * np.eye(3), "b": np.zeros(3)})
        loss, _ = forward_loss(params, spec, (x, np.arange(3)))
        assert loss < 1e-6

    @pytest.mark.parametrize("kind", ["logreg", "mlp"])
    def test_scalar_oracle(self, rng, kind):
        spec = ModelSpec(kind, 3, 4, hidden_units=5)
        params = init_model(spec, rng)
        x, y = _batch(rng, 6, 3, 4)
        t = unflatten(params)
        total = 0.0
        for xi, yi in zip(x.tolist(), y.tolist()):
            if kind == "logreg":
                z = [sum(xi[a] * t["W"][a][k] for a in range(3)) + t["b"][k] for k in range(4)]
            else:
                h = [max(0.0, sum(xi[a] * t["W1"][a][j] for a in range(3)) + t["b1"][j])
                     for j in range(5)]
                z = [sum(h[j] * t["W2"][j][k] for j in range(5)) + t["b2"][k] for k in range(4)]
            m = max(z)
            total += -(z[yi] - m - math.log(sum(math.exp(v - m) for v in z)))
        assert forward_loss(params, spec, (x, y))[0] == pytest.approx(total / 6, abs=1e-12)

    def test_label_out_of_range(self, rng):
        spec = ModelSpec("logreg", 2, 3)
        with pytest.raises(ValueError, match="out of range"):
            forward_loss(np.zeros(spec.n_params), spec, (np.ones((1, 2)), np.array([3])))

    def test_empty_batch(self):
        spec = ModelSpec("logreg", 2, 3)
        with pytest.raises(ValueError):
            forward_loss(np.zeros(spec.n_params), spec, (np.ones((0, 2)), np.array([], int)))


class TestGradient:
    @pytest.mark.parametrize("kind", ["logreg", "mlp"])
    def test_finite_differences(self, kind):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            d, c = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            spec = ModelSpec(kind, d, c, hidden_units=int(rng.integers(1, 6)))
            values = rng.standard_normal(spec.n_params)
            batch = _batch(rng, int(rng.integers(1, 9)), d, c)
            analytic = backward(values, spec, batch).values
            worst = max(worst, max_rel_error(analytic, _numeric_grad(values, spec, batch)))
        assert worst < 1e-4

    def test_saturated_gradient_vanishes(self):
        spec = ModelSpec("logreg", 3, 3)
        params = flatten({"W": 1e3 * np.eye(3), "b": np.zeros(3)})
        g = backward(params, spec, (np.eye(3), np.arange(3))).values
        assert np.linalg.norm(g) < 1e-6

    @pytest.mark.parametrize("kind", ["logreg", "mlp"])
    def test_duplicated_batch(self, rng, kind):
        spec = ModelSpec(kind, 4, 3, hidden_units=6)
        params = init_model(spec, rng)
        x, y = _batch(rng, 5, 4, 3)
        a = backward(params, spec, (x, y)).values
        b = backward(params, spec, (np.repeat(x, 2, axis=0), np.repeat(y, 2))).values
        np.testing.assert_allclose(a, b, atol=1e-15, rtol=1e-12)

    @pytest.mark.parametrize("kind", ["logreg", "mlp"])
    def test_small_step_descends(self, kind):
        rng = np.random.default_rng(8)
        for _ in range(50):
            spec = ModelSpec(kind, 4, 3, hidden_units=6)
            params = init_model(spec, rng)
            batch = _batch(rng, 16, 4, 3)
            before = forward_loss(params, spec, batch)[0]
            step = params.values - 1e-3 * backward(params, spec, batch).values
            assert forward_loss(step, spec, batch)[0] <= before


class TestLocalUpdate:
    spec = ModelSpec("logreg", 4, 3)

    def test_zero_rate(self, rng):
        start = init_model(self.spec, rng)
        rep = local_update(start, self.spec, _dataset(rng), TrainConfig(learning_rate=0.0), rng)
        assert np.all(rep.delta.values.values == 0)

    def test_single_full_batch_step(self, rng):
        data = _dataset(rng)
        start = init_model(self.spec, rng)
        cfg = TrainConfig(local_epochs=1, batch_size=40, learning_rate=0.1)
        rep = local_update(start, self.spec, data, cfg, np.random.default_rng(0))
        expected = -0.1 * backward(start, self.spec, data.train).values
        np.testing.assert_allclose(rep.delta.values.values, expected, atol=1e-15, rtol=1e-12)

    @pytest.mark.parametrize("kind", ["logreg", "mlp"])
    def test_deterministic(self, kind):
        spec = ModelSpec(kind, 4, 3, hidden_units=6)
        data = _dataset(np.random.default_rng(1))
        start = init_model(spec, np.random.default_rng(2))
        a = local_update(start, spec, data, TrainConfig(), np.random.default_rng(5), 3)
        b = local_update(start, spec, data, TrainConfig(), np.random.default_rng(5), 3)
        assert np.array_equal(a.delta.values.values, b.delta.values.values)
        assert (a.train_loss, a.local_f1, a.finetuned_f1) == (b.train_loss, b.local_f1,
                                                              b.finetuned_f1)
        assert a.round == 3 and a.delta.round == 3

    def test_layout_and_fields(self, rng):
        data = _dataset(rng)
        start = init_model(self.spec, rng)
        rep = local_update(start, self.spec, data, TrainConfig(), rng)
        assert rep.delta.values.layout == self.spec.layout
        np.testing.assert_array_equal(rep.final_params.values,
                                      start.values + rep.delta.values.values)
        assert np.array_equal(flatten(unflatten(rep.final_params)).values,
                              rep.final_params.values)
        assert math.isfinite(rep.train_loss)
        tx, ty = data.test
        assert rep.local_f1 == macro_f1(predict(start, self.spec, tx), ty, 3)
        assert rep.finetuned_f1 == macro_f1(predict(rep.final_params, self.spec, tx), ty, 3)

    def test_layout_mismatch(self, rng):
        start = init_model(ModelSpec("mlp", 4, 3), rng)
        with pytest.raises(ValueError):
            local_update(start, self.spec, _dataset(rng), TrainConfig(), rng)

    def test_empty_dataset(self, rng):
        data = ClientDataset(0, (np.zeros((0, 4)), np.zeros(0, int)), _batch(rng, 5, 4, 3), 0)
        with pytest.raises(ValueError, match="empty"):
            local_update(init_model(self.spec, rng), self.spec, data, TrainConfig(), rng)

    def test_learning_reduces_loss(self, rng):
        means = rng.standard_normal((3, 4)) * 3
        y = rng.integers(0, 3, 200)
        x = means[y] + 0.3 * rng.standard_normal((200, 4))
        data = ClientDataset(0, (x[:150], y[:150]), (x[150:], y[150:]), 0)
        start = init_model(self.spec, rng)
        before = forward_loss(start, self.spec, data.train)[0]
        rep = local_update(start, self.spec, data, TrainConfig(learning_rate=0.1), rng)
        assert rep.train_loss < before and rep.finetuned_f1 > 0.9


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2, 1], [0, 1, 2, 1], 3) == 1.0

    def test_all_wrong_binary(self):
        assert macro_f1([1, 0, 1], [0, 1, 0], 2) == 0.0

    def test_hand_oracle(self):
        assert macro_f1([0, 0, 1, 2], [0, 1, 1, 2], 3) == pytest.approx(7 / 9, abs=1e-12)

    def test_absent_classes_excluded(self):
        # class 2 never occurs in the labels, so only classes 0 and 1 are averaged
        assert macro_f1([0, 1, 2], [0, 1, 1], 3) == pytest.approx((1 + 2 / 3) / 2, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            macro_f1([0, 1], [0], 2)

    def test_matches_sklearn(self):
        from sklearn.metrics import f1_score

        rng = np.random.default_rng(0)
        for _ in range(50):
            y = rng.integers(0, 5, 40)
            p = rng.integers(0, 5, 40)
            labels = sorted(set(y.tolist()))
            ref = f1_score(y, p, labels=labels, average="macro", zero_division=0)
            assert macro_f1(p, y, 5) == pytest.approx(ref, abs=1e-12)
