"""Client-side learning for desk-scale models.

Two model kinds share one flat-parameter contract:

* ``logreg``: ``logits = x @ W + b``
* ``mlp``: ``logits = relu(x @ W1 + b1) @ W2 + b2``

The loss is mean softmax cross-entropy and the client optimiser is plain SGD.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datagen import ClientDataset
from .divergence import DeltaVector, ParameterVector

MODEL_KINDS = ("logreg", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    n_classes: int
    hidden_units: int = 32
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model.kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.input_dim < 1 or self.n_classes < 2:
            raise ValueError("model dims must be positive and n_classes >= 2")
        if self.kind == "mlp" and self.hidden_units < 1:
            raise ValueError("model.hidden_units must be >= 1")

    @property
    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        d, c, h = self.input_dim, self.n_classes, self.hidden_units
        if self.kind == "logreg":
            return (("W", (d, c)), ("b", (c,)))
        return (("W1", (d, h)), ("b1", (h,)), ("W2", (h, c)), ("b2", (c,)))

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout)


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 3
    batch_size: int = 32
    learning_rate: float = 0.01
    shuffle_seed: int = 0

    def validate(self, prefix: str = "train") -> None:
        if self.local_epochs < 1:
            raise ValueError(f"{prefix}.local_epochs: must be >= 1")
        if self.batch_size < 1:
            raise ValueError(f"{prefix}.batch_size: must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError(f"{prefix}.learning_rate: must be >= 0")


@dataclass(frozen=True)
class LocalReport:
    client_id: int
    round: int
    delta: DeltaVector
    train_loss: float
    local_f1: float
    final_params: ParameterVector
    finetuned_f1: float = float("nan")


def _views(values: np.ndarray, spec: ModelSpec) -> list[np.ndarray]:
    out = []
    offset = 0
    for _, shape in spec.layout:
        size = math.prod(shape)
        out.append(values[offset : offset + size].reshape(shape))
        offset += size
    return out


def _values(params) -> np.ndarray:
    return params.values if isinstance(params, ParameterVector) else np.asarray(params, dtype=np.float64)


def init_model(spec: ModelSpec, rng: np.random.Generator | None = None) -> ParameterVector:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(spec.init_seed) if rng is None else rng
    values = np.zeros(spec.n_params)
    views = _views(values, spec)
    for (name, shape), view in zip(spec.layout, views):
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            view[...] = rng.uniform(-bound, bound, size=shape)
    return ParameterVector(values, spec.layout)


def _check_batch(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> None:
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} samples but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ValueError(f"label out of range [0, {spec.n_classes})")


def logits(params, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    views = _views(_values(params), spec)
    if spec.kind == "logreg":
        w, b = views
        return x @ w + b
    w1, b1, w2, b2 = views
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(params, spec: ModelSpec, batch) -> tuple[float, np.ndarray]:
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_batch(spec, x, y)
    z = logits(params, spec, x)
    logp = _log_softmax(z)
    return float(-logp[np.arange(y.shape[0]), y].mean()), z


def _loss_and_grad(values: np.ndarray, spec: ModelSpec, x: np.ndarray, y: np.ndarray):
    n = x.shape[0]
    grad = np.empty_like(values)
    gviews = _views(grad, spec)
    views = _views(values, spec)
    if spec.kind == "logreg":
        w, b = views
        z = x @ w + b
    else:
        w1, b1, w2, b2 = views
        pre = x @ w1 + b1
        hidden = np.maximum(pre, 0.0)
        z = hidden @ w2 + b2
    logp = _log_softmax(z)
    rows = np.arange(n)
    loss = float(-logp[rows, y].mean())
    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz /= n
    if spec.kind == "logreg":
        gviews[0][...] = x.T @ dz
        gviews[1][...] = dz.sum(axis=0)
    else:
        gviews[2][...] = hidden.T @ dz
        gviews[3][...] = dz.sum(axis=0)
        dh = (dz @ w2.T) * (pre > 0.0)
        gviews[0][...] = x.T @ dh
        gviews[1][...] = dh.sum(axis=0)
    return loss, grad


def backward(params, spec: ModelSpec, batch) -> ParameterVector:
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_batch(spec, x, y)
    _, grad = _loss_and_grad(_values(params), spec, x, y)
    return ParameterVector(grad, spec.layout)


def predict(params, spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    return np.argmax(logits(params, spec, np.asarray(x, dtype=np.float64)), axis=1)


def macro_f1(predictions, labels, n_classes: int) -> float:
    """Macro-F1 over the classes that occur in ``labels``."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("predictions and labels differ in length")
    if true.size == 0:
        return 0.0
    support = np.bincount(true, minlength=n_classes)[:n_classes]
    predicted = np.bincount(pred, minlength=n_classes)[:n_classes]
    tp = np.bincount(true[pred == true], minlength=n_classes)[:n_classes]
    present = support > 0
    # 2PR/(P+R) written without the 0/0 cases
    scores = 2.0 * tp[present] / (predicted[present] + support[present])
    return float(np.mean(scores))


def evaluate_f1(params, spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> float:
    return macro_f1(predict(params, spec, x), y, spec.n_classes)


def local_update(start: ParameterVector, spec: ModelSpec, data: ClientDataset,
                 cfg: TrainConfig, rng: np.random.Generator, round: int = 0) -> LocalReport:
    """Run ``cfg.local_epochs`` epochs of mini-batch SGD from ``start``.

    The reported loss is the sample-weighted mean batch loss of the last epoch.
    ``local_f1`` scores the received (cohort) model on the client test split;
    ``finetuned_f1`` scores the parameters after local training.
    """
    if start.layout != spec.layout:
        raise ValueError("start parameters do not match the model layout")
    x, y = data.train
    if y.shape[0] == 0:
        raise ValueError(f"client {data.client_id}: empty training set")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_batch(spec, x, y)
    theta = start.values.copy()
    n = y.shape[0]
    bs = cfg.batch_size
    lr = cfg.learning_rate
    epoch_loss = 0.0
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            loss, grad = _loss_and_grad(theta, spec, x[idx], y[idx])
            total += loss * idx.shape[0]
            theta -= lr * grad
        epoch_loss = total / n
    final = ParameterVector(theta, spec.layout)
    delta = DeltaVector(data.client_id, round, ParameterVector(theta - start.values, spec.layout))
    tx, ty = data.test
    return LocalReport(data.client_id, round, delta, float(epoch_loss),
                       evaluate_f1(start, spec, tx, ty), final, evaluate_f1(final, spec, tx, ty))
