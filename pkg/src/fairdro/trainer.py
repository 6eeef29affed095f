"""Alternating training loop: mini-batch theta steps, then a full-data weight update.

Variants:

``scratch``               balanced ERM (uniform weights)
``rw``                    Kamiran-Calders reweighing, fixed per-cell weights
``fairdro``               classwise chi-square ball, quasi-probabilities allowed
``fairdro_no_classwise``  one chi-square ball over all (y, a) cells
``fairdro_nonneg``        classwise chi-square ball intersected with q >= 0
``group_dro``             probability simplex over (y, a) cells, EG ascent
``gap_reg``               balanced CE + lambda * mean_y max-gap of per-group CE
``var_reg``               balanced CE + lambda * mean_y variance of per-group CE
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dro
from .dataset import balanced_batch, partition_cells
from .errors import (
    BatchCompositionError,
    DivisibilityError,
    EmptyCellError,
    SpecError,
    TrainingDivergedError,
)
from .metrics import ZERO_ONE, all_groupwise_losses, cell_accuracies
from .model import (
    LinearModel,
    OptimizerState,
    adamw_step,
    cosine_lr,
    grad_weighted_cross_entropy,
    per_sample_cross_entropy,
)

DRO_VARIANTS = ("fairdro", "fairdro_no_classwise", "fairdro_nonneg", "group_dro")
REG_VARIANTS = ("gap_reg", "var_reg")
VARIANTS = ("scratch", "rw", *DRO_VARIANTS, *REG_VARIANTS)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "fairdro"
    rho: float = 1.0
    lam: float = 0.0
    epochs: int = 70
    # None: ceil(train rows / batch size)
    iterations_per_epoch: int | None = None
    batch_size: int = 128
    base_lr: float = 1e-3
    weight_decay: float = 1e-3
    eg_step: float = 0.1
    seed: int = 0
    smoothing: bool = True
    # None: update weights once per epoch; otherwise also every k theta steps
    q_update_interval: int | None = None
    # None: the variant's own choice; only meaningful for DRO variants
    classwise: bool | None = None

    def validate(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant in DRO_VARIANTS and self.variant != "group_dro":
            if not (math.isfinite(self.rho) and self.rho > 0):
                raise SpecError(f"{self.variant} needs rho > 0, got {self.rho}")
        if self.variant == "group_dro" and not self.eg_step > 0:
            raise SpecError("group_dro needs eg_step > 0")
        if self.variant in REG_VARIANTS and not (math.isfinite(self.lam) and self.lam >= 0):
            raise SpecError(f"{self.variant} needs lambda >= 0, got {self.lam}")
        if self.epochs < 1:
            raise SpecError("epochs must be >= 1")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise SpecError("iterations_per_epoch must be >= 1")
        if self.batch_size < 1:
            raise SpecError("batch_size must be >= 1")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise SpecError("learning rate and weight decay must be >= 0")
        if self.q_update_interval is not None and self.q_update_interval < 1:
            raise SpecError("q_update_interval must be >= 1")
        return self

    def uncertainty_spec(self, num_groups):
        v = self.variant
        if v not in DRO_VARIANTS:
            return None
        classwise = v in ("fairdro", "fairdro_nonneg")
        if self.classwise is not None:
            classwise = self.classwise
        return dro.UncertaintySpec(
            rho=self.rho,
            num_groups=num_groups,
            allow_negative=v in ("fairdro", "fairdro_no_classwise"),
            classwise=classwise,
            use_chi2=v != "group_dro",
        ).validate()


@dataclass
class TrainHistory:
    q: list = field(default_factory=list)
    train_losses: list = field(default_factory=list)
    train_accuracies: list = field(default_factory=list)
    test_accuracies: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)

    def records(self):
        for t in range(len(self.q)):
            yield {
                "epoch": t,
                "lr": self.learning_rates[t],
                "q": np.asarray(self.q[t]).tolist(),
                "train_zero_one_losses": np.asarray(self.train_losses[t]).tolist(),
                "train_cell_accuracies": np.asarray(self.train_accuracies[t]).tolist(),
                "test_cell_accuracies": np.asarray(self.test_accuracies[t]).tolist(),
            }

    def to_jsonl(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    def q_changes(self):
        """Per-epoch max-abs change of the weights (first entry is from uniform)."""
        qs = [np.asarray(q, dtype=float) for q in self.q]
        start = np.full_like(qs[0], 1.0 / qs[0].shape[-1])
        prev = [start, *qs[:-1]]
        return np.array([np.max(np.abs(a - b)) for a, b in zip(qs, prev)])


# --------------------------------------------------------------- weights


def rw_weights(partition):
    """Kamiran-Calders reweighing: w(y, a) = N_y N_a / (N N_ya)."""
    n = partition.counts.astype(float)
    if np.any(n == 0):
        empty = [tuple(map(int, c)) for c in np.argwhere(n == 0)]
        raise EmptyCellError(empty)
    total = n.sum()
    return n.sum(axis=1, keepdims=True) * n.sum(axis=0, keepdims=True) / (total * n)


def q_targets_from_losses(losses, spec, q_current=None, eg_step=0.1):
    """Best-response weights for a |Y| x |A| matrix of per-cell losses.

    Classwise specs give a |Y| x |A| array (one weight vector per class);
    otherwise a flat vector over the |Y||A| cells.
    """
    losses = np.asarray(losses, dtype=float)
    if spec.classwise:
        rows = losses
        cur = q_current
    else:
        rows = losses.reshape(1, -1)
        cur = None if q_current is None else np.reshape(q_current, (1, -1))
    out = []
    for i, l in enumerate(rows):
        if not spec.use_chi2:
            start = np.full(len(l), 1.0 / len(l)) if cur is None else cur[i]
            out.append(dro.simplex_best_response(l, eg_step, start))
        elif spec.allow_negative:
            out.append(dro.best_response(l, spec.rho))
        else:
            out.append(dro.best_response_nonneg(l, spec.rho))
    out = np.array(out)
    return out if spec.classwise else out[0]


def compute_q_targets(model, dataset, partition, spec, q_current=None, eg_step=0.1):
    losses = all_groupwise_losses(model, dataset, partition, ZERO_ONE)
    return q_targets_from_losses(losses, spec, q_current, eg_step)


def initial_q(spec, num_classes):
    if spec is not None and not spec.classwise:
        n = num_classes * spec.num_groups
        return np.full(n, 1.0 / n)
    na = spec.num_groups if spec is not None else None
    return np.full((num_classes, na), 1.0 / na)


def cell_multipliers(q, num_classes, num_groups):
    """Per-row loss multiplier for each cell; uniform weights give all ones."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        return q * num_groups
    return q.reshape(num_classes, num_groups) * (num_classes * num_groups)


# ------------------------------------------------------------ regularizers


def _regularized(model, features, classes, groups, num_classes, num_groups, variant, lam):
    if variant not in REG_VARIANTS:
        raise SpecError(f"not a regularizer variant: {variant!r}")
    n = len(classes)
    nll = per_sample_cross_entropy(model, features, classes)
    cell = classes * num_groups + groups
    counts = np.bincount(cell, minlength=num_classes * num_groups)
    if np.any(counts == 0):
        missing = [divmod(int(c), num_groups) for c in np.flatnonzero(counts == 0)]
        raise BatchCompositionError(f"batch has no rows for cells {missing}")
    ce = (np.bincount(cell, weights=nll, minlength=len(counts)) / counts).reshape(
        num_classes, num_groups
    )
    if variant == "gap_reg":
        reg = ce.max(axis=1) - ce.min(axis=1)
        d = np.zeros_like(ce)
        rows = np.arange(num_classes)
        d[rows, ce.argmax(axis=1)] += 1.0
        d[rows, ce.argmin(axis=1)] -= 1.0
    else:
        centred = ce - ce.mean(axis=1, keepdims=True)
        reg = np.mean(centred**2, axis=1)
        d = 2.0 * centred / num_groups
    loss = nll.mean() + lam * reg.mean()
    # per-row coefficient on its own CE term, scaled so the mean over rows is the loss
    coef = 1.0 + n * (lam / num_classes) * (d.ravel() / counts)[cell]
    return float(loss), coef


def regularized_loss(model, features, classes, groups, num_classes, num_groups, variant, lam):
    return _regularized(model, features, classes, groups, num_classes, num_groups, variant, lam)[0]


def grad_regularized_loss(model, features, classes, groups, num_classes, num_groups, variant, lam):
    _, coef = _regularized(model, features, classes, groups, num_classes, num_groups, variant, lam)
    return grad_weighted_cross_entropy(model, features, classes, coef)


# ------------------------------------------------------------------ train


def _check_history_q(q, spec):
    if spec is None:
        return
    rows = q if spec.classwise else [q]
    for y, row in enumerate(rows):
        dro.GroupWeights(row, y if spec.classwise else None).check(
            spec.rho if spec.use_chi2 else None
        )


def train(config, train_data, test_data=None, on_epoch=None):
    """Run the configured variant. Returns ``(LinearModel, TrainHistory)``."""
    config.validate()
    ny, na = train_data.num_classes, train_data.num_groups
    part = partition_cells(train_data)
    test_part = partition_cells(test_data) if test_data is not None else None
    if config.batch_size % (ny * na):
        raise DivisibilityError(
            f"batch size {config.batch_size} not divisible by {ny * na} cells"
        )
    spec = config.uncertainty_spec(na)
    iters = config.iterations_per_epoch or math.ceil(len(train_data) / config.batch_size)
    T = config.epochs

    rng = np.random.default_rng(config.seed)
    model = LinearModel.random(ny, train_data.num_features, rng)
    state = OptimizerState.for_model(model, weight_decay=config.weight_decay)
    q = initial_q(spec, ny) if spec is not None else np.full((ny, na), 1.0 / na)
    mult = rw_weights(part) if config.variant == "rw" else cell_multipliers(q, ny, na)

    X, Y, A = train_data.features, train_data.classes, train_data.groups
    history = TrainHistory()
    step = 0

    def update_q(epoch):
        nonlocal q, mult
        target = compute_q_targets(model, train_data, part, spec, q, config.eg_step)
        q = dro.smoothed_ibr_update(q, target, epoch, T) if config.smoothing else target
        mult = cell_multipliers(q, ny, na)

    for t in range(T):
        lr = cosine_lr(config.base_lr, t, T)
        for _ in range(iters):
            idx = balanced_batch(part, config.batch_size, rng)
            xb, yb, ab = X[idx], Y[idx], A[idx]
            if config.variant in REG_VARIANTS:
                loss, coef = _regularized(model, xb, yb, ab, ny, na, config.variant, config.lam)
            else:
                coef = mult[yb, ab]
                loss = float(coef @ per_sample_cross_entropy(model, xb, yb)) / len(yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(t)
            grad = grad_weighted_cross_entropy(model, xb, yb, coef)
            model, state = adamw_step(model, state, grad, lr)
            step += 1
            if spec is not None and config.q_update_interval and step % config.q_update_interval == 0:
                update_q(t)
        if not np.all(np.isfinite(model.theta)):
            raise TrainingDivergedError(t, "non-finite parameters")

        if spec is not None and not config.q_update_interval:
            update_q(t)
        _check_history_q(q, spec)
        train_acc = cell_accuracies(model, train_data, part).acc
        history.q.append(np.array(q))
        history.train_losses.append(1.0 - train_acc)
        history.train_accuracies.append(train_acc)
        history.test_accuracies.append(
            cell_accuracies(model, test_data, test_part).acc if test_data is not None else None
        )
        history.learning_rates.append(lr)
        if on_epoch is not None:
            on_epoch(t, model, q)
    return model, history
