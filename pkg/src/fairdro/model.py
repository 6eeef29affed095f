"""Multinomial logistic regression with analytic gradients and AdamW."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import EmptyBatchError, ParseError, RangeError, ShapeError

PROB_FLOOR = 1e-300
CHECKPOINT_MAGIC = "fairdro-linear-model"


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``theta`` is |Y| x (d+1); the last column is the bias."""

    theta: np.ndarray

    @classmethod
    def zeros(cls, num_classes, num_features):
        return cls(np.zeros((num_classes, num_features + 1)))

    @classmethod
    def random(cls, num_classes, num_features, rng, scale=0.01):
        return cls(scale * rng.standard_normal((num_classes, num_features + 1)))

    @property
    def num_classes(self):
        return self.theta.shape[0]

    @property
    def num_features(self):
        return self.theta.shape[1] - 1


@dataclass(frozen=True, eq=False)
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.001

    @classmethod
    def for_model(cls, model, **hyper):
        return cls(np.zeros_like(model.theta), np.zeros_like(model.theta), 0, **hyper)


def _as_matrix(model, features):
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != model.num_features:
        raise ShapeError(
            f"expected {model.num_features} features per row, got shape {np.shape(features)}"
        )
    return x, single


def predict_logits(model, features):
    x, single = _as_matrix(model, features)
    w, b = model.theta[:, :-1], model.theta[:, -1]
    z = x @ w.T + b
    return z[0] if single else z


def predict_class(model, features):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    z = predict_logits(model, features)
    return np.argmax(z, axis=-1)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_rows(model, features, classes, sample_weights):
    x, _ = _as_matrix(model, features)
    y = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if x.shape[0] == 0:
        raise EmptyBatchError("no rows")
    if y.shape != (x.shape[0],):
        raise ShapeError("classes must have one entry per row")
    if sample_weights is None:
        w = np.ones(x.shape[0])
    else:
        w = np.atleast_1d(np.asarray(sample_weights, dtype=float))
        if w.shape != (x.shape[0],):
            raise ShapeError("sample_weights must have one entry per row")
    return x, y, w


def per_sample_cross_entropy(model, features, classes):
    x, y, _ = _check_rows(model, features, classes, None)
    p = _softmax(predict_logits(model, x))
    return -np.log(np.maximum(p[np.arange(len(y)), y], PROB_FLOOR))


def weighted_cross_entropy(model, features, classes, sample_weights=None):
    """Sum of weighted per-row losses divided by the row count (not the weight sum)."""
    x, y, w = _check_rows(model, features, classes, sample_weights)
    p = _softmax(predict_logits(model, x))
    nll = -np.log(np.maximum(p[np.arange(len(y)), y], PROB_FLOOR))
    return float(w @ nll) / len(y)


def grad_weighted_cross_entropy(model, features, classes, sample_weights=None):
    x, y, w = _check_rows(model, features, classes, sample_weights)
    p = _softmax(predict_logits(model, x))
    p[np.arange(len(y)), y] -= 1.0
    r = p * (w / len(y))[:, None]
    return np.hstack([r.T @ x, r.sum(axis=0)[:, None]])


def zero_one_loss(model, features, classes):
    x, y, _ = _check_rows(model, features, classes, None)
    return float(np.mean(predict_class(model, x) != y))


def adamw_step(model, state, gradient, learning_rate):
    g = np.asarray(gradient, dtype=float)
    if g.shape != model.theta.shape or state.first_moment.shape != model.theta.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match theta {model.theta.shape}")
    if learning_rate < 0:
        raise RangeError("learning rate must be >= 0")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = model.theta - learning_rate * (
        m_hat / (np.sqrt(v_hat) + state.epsilon) + state.weight_decay * model.theta
    )
    return LinearModel(theta), replace(state, first_moment=m, second_moment=v, step_count=t)


def cosine_lr(base_lr, epoch, total):
    if total < 1:
        raise RangeError("total epochs must be >= 1")
    if not 0 <= epoch <= total:
        raise RangeError(f"epoch {epoch} outside [0, {total}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


# ------------------------------------------------------------ checkpoints
#
# Text format:
#   fairdro-linear-model <num_classes> <num_columns>
#   one line per class: the row of theta, space separated, shortest round-trip decimals


def save_model(model, path):
    k, c = model.theta.shape
    lines = [f"{CHECKPOINT_MAGIC} {k} {c}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in model.theta]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path):
    tokens = Path(path).read_text(encoding="utf-8").split()
    if len(tokens) < 3 or tokens[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a model checkpoint")
    try:
        k, c = int(tokens[1]), int(tokens[2])
        values = np.array([float(v) for v in tokens[3:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if values.size != k * c:
        raise ParseError(f"{path}: expected {k * c} values, found {values.size}")
    return LinearModel(values.reshape(k, c))
