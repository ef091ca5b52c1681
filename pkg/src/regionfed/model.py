"""Trainable classifier core: flattened parameter vectors, forward/loss/
gradient for a 1-hidden-layer tanh classifier, local SGD, evaluation, and a
finite-difference gradient oracle for tests.

Parameters live in a single flat float64 vector (layout: W1, b1, W2, b2)
so that federation code can treat models as plain vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigurationError, ParseError, UsageError

DATASET_FORMAT = "dataset-v1"
MODEL_FORMAT = "model-v1"


@dataclass
class ParamVector:
    values: np.ndarray
    shape_spec: Tuple[int, int, int]   # (in_dim, hidden, classes)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.shape_spec = tuple(int(s) for s in self.shape_spec)
        if self.values.shape != (param_count(self.shape_spec),):
            raise UsageError(
                f"expected {param_count(self.shape_spec)} values for "
                f"shape {self.shape_spec}, got {self.values.shape}")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shape_spec)

    def __add__(self, other: "ParamVector") -> "ParamVector":
        _check_same_spec(self, other)
        return ParamVector(self.values + other.values, self.shape_spec)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        _check_same_spec(self, other)
        return ParamVector(self.values - other.values, self.shape_spec)


def _check_same_spec(a: ParamVector, b: ParamVector) -> None:
    if a.shape_spec != b.shape_spec:
        raise UsageError(f"shape_spec mismatch: {a.shape_spec} vs {b.shape_spec}")


def param_count(shape_spec) -> int:
    d, h, c = shape_spec
    return d * h + h + h * c + c


def unflatten(model: ParamVector):
    """Split the flat vector into (W1, b1, W2, b2) views."""
    d, h, c = model.shape_spec
    v = model.values
    i = 0
    w1 = v[i:i + d * h].reshape(d, h); i += d * h
    b1 = v[i:i + h]; i += h
    w2 = v[i:i + h * c].reshape(h, c); i += h * c
    b2 = v[i:i + c]
    return w1, b1, w2, b2


def flatten(w1, b1, w2, b2, shape_spec) -> ParamVector:
    return ParamVector(
        np.concatenate([w1.ravel(), b1.ravel(), w2.ravel(), b2.ravel()]),
        shape_spec)


@dataclass
class Dataset:
    features: np.ndarray     # (n, d)
    labels: np.ndarray       # (n,) ints in [0, classes)
    classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.train_idx = np.asarray(self.train_idx, dtype=int)
        self.test_idx = np.asarray(self.test_idx, dtype=int)
        if np.any(self.labels < 0) or np.any(self.labels >= self.classes):
            raise UsageError("labels out of range")

    @property
    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    @property
    def test(self):
        return self.features[self.test_idx], self.labels[self.test_idx]


@dataclass
class TrainConfig:
    local_epochs: int = 10
    batch_size: int = 20
    learning_rate: float = 0.05

    def __post_init__(self):
        if self.local_epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigurationError("invalid training configuration")


def init_model(shape_spec, rng: np.random.Generator) -> ParamVector:
    """Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero."""
    d, h, c = (int(s) for s in shape_spec)
    if d < 1 or h < 1 or c < 1:
        raise ConfigurationError(f"invalid shape_spec {shape_spec}")
    w1 = rng.uniform(-1.0, 1.0, size=(d, h)) / np.sqrt(d)
    w2 = rng.uniform(-1.0, 1.0, size=(h, c)) / np.sqrt(h)
    return flatten(w1, np.zeros(h), w2, np.zeros(c), (d, h, c))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(model: ParamVector, x: np.ndarray,
                  y: np.ndarray) -> Tuple[float, ParamVector]:
    """Mean cross-entropy over the batch and its exact gradient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise UsageError("empty batch")
    d, h, c = model.shape_spec
    if x.shape[1] != d:
        raise UsageError(f"feature dim {x.shape[1]} != model input dim {d}")
    w1, b1, w2, b2 = unflatten(model)
    a1 = np.tanh(x @ w1 + b1)
    logits = a1 @ w2 + b2
    probs = _softmax(logits)
    n = len(x)
    loss = float(-np.mean(np.log(probs[np.arange(n), y] + 1e-300)))

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    gw2 = a1.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    da1 = dlogits @ w2.T
    dz1 = da1 * (1.0 - a1 ** 2)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, flatten(gw1, gb1, gw2, gb2, model.shape_spec)


def loss_only(model: ParamVector, x: np.ndarray, y: np.ndarray) -> float:
    return loss_and_grad(model, x, y)[0]


def av_update(start: ParamVector, data: Dataset, cfg: TrainConfig,
              rng: np.random.Generator) -> Tuple[ParamVector, ParamVector]:
    """Local mini-batch SGD; returns (delta, trained) with
    trained == start + delta exactly. The final short batch is kept."""
    x, y = data.train
    if len(x) == 0:
        raise UsageError("empty train split")
    w = start.copy()
    for _ in range(cfg.local_epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(x), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            _, grad = loss_and_grad(w, x[batch], y[batch])
            w = ParamVector(w.values - cfg.learning_rate * grad.values,
                            w.shape_spec)
    delta = w - start
    # re-derive the trained vector from the delta so that
    # trained == start + delta holds bit-exactly for callers
    return delta, start + delta


def evaluate(model: ParamVector, x: np.ndarray,
             y: np.ndarray) -> Tuple[float, float]:
    """Top-1 accuracy and mean loss; argmax ties resolve to the lowest class."""
    if len(x) == 0:
        raise UsageError("empty evaluation split")
    w1, b1, w2, b2 = unflatten(model)
    a1 = np.tanh(np.asarray(x, dtype=float) @ w1 + b1)
    probs = _softmax(a1 @ w2 + b2)
    pred = probs.argmax(axis=1)
    acc = float(np.mean(pred == np.asarray(y)))
    n = len(x)
    loss = float(-np.mean(np.log(probs[np.arange(n), np.asarray(y)] + 1e-300)))
    return acc, loss


def finite_diff_grad(model: ParamVector, x: np.ndarray, y: np.ndarray,
                     step: float = 1e-5) -> ParamVector:
    """Central-difference gradient estimate, one coordinate at a time."""
    if step <= 0:
        raise UsageError("step must be positive")
    grad = np.empty_like(model.values)
    base = model.values
    for i in range(len(base)):
        plus = base.copy(); plus[i] += step
        minus = base.copy(); minus[i] -= step
        lp = loss_only(ParamVector(plus, model.shape_spec), x, y)
        lm = loss_only(ParamVector(minus, model.shape_spec), x, y)
        grad[i] = (lp - lm) / (2.0 * step)
    return ParamVector(grad, model.shape_spec)


def save_dataset(data: Dataset, path) -> None:
    n, d = data.features.shape
    with open(path, "w") as fh:
        fh.write(f"{DATASET_FORMAT} n={n} d={d} classes={data.classes}\n")
        fh.write("train " + ",".join(map(str, data.train_idx)) + "\n")
        fh.write("test " + ",".join(map(str, data.test_idx)) + "\n")
        for label, row in zip(data.labels, data.features):
            fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(DATASET_FORMAT):
        raise ParseError(f"expected '{DATASET_FORMAT}' header", 1)
    try:
        meta = dict(field.split("=") for field in lines[0].split()[1:])
        n, d, classes = int(meta["n"]), int(meta["d"]), int(meta["classes"])
    except (ValueError, KeyError):
        raise ParseError("malformed dataset header", 1)
    if len(lines) < 3 + n:
        raise ParseError(f"expected {n} data rows", len(lines))

    def _split(line_no, tag):
        parts = lines[line_no - 1].split(maxsplit=1)
        if not parts or parts[0] != tag:
            raise ParseError(f"expected '{tag}' index line", line_no)
        body = parts[1].strip() if len(parts) > 1 else ""
        return np.array([int(t) for t in body.split(",")] if body else [], dtype=int)

    train_idx = _split(2, "train")
    test_idx = _split(3, "test")
    features = np.empty((n, d))
    labels = np.empty(n, dtype=int)
    for i in range(n):
        line_no = 4 + i
        parts = lines[line_no - 1].split(",")
        if len(parts) != d + 1:
            raise ParseError(f"expected label plus {d} features", line_no)
        try:
            labels[i] = int(parts[0])
            features[i] = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), line_no)
    return Dataset(features=features, labels=labels, classes=classes,
                   train_idx=train_idx, test_idx=test_idx)


def save_model(model: ParamVector, path) -> None:
    d, h, c = model.shape_spec
    with open(path, "w") as fh:
        fh.write(f"{MODEL_FORMAT} d={d} h={h} classes={c}\n")
        for v in model.values:
            fh.write(repr(float(v)) + "\n")


def load_model(path) -> ParamVector:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(MODEL_FORMAT):
        raise ParseError(f"expected '{MODEL_FORMAT}' header", 1)
    try:
        meta = dict(field.split("=") for field in lines[0].split()[1:])
        spec = (int(meta["d"]), int(meta["h"]), int(meta["classes"]))
    except (ValueError, KeyError):
        raise ParseError("malformed model header", 1)
    values = [float(v) for v in lines[1:] if v.strip()]
    if len(values) != param_count(spec):
        raise ParseError(
            f"expected {param_count(spec)} values, found {len(values)}",
            len(lines))
    return ParamVector(np.array(values), spec)
