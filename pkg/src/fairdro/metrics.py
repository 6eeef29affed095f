"""Accuracy and fairness metrics computed from exact full-dataset counts."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import partition_cells
from .errors import FairDROError
from .model import per_sample_cross_entropy, predict_class

ZERO_ONE = "zero-one"
CROSS_ENTROPY = "cross-entropy"


@dataclass(frozen=True, eq=False)
class CellAccuracyMatrix:
    """``acc[y, a]`` estimates P(Yhat = y | Y = y, A = a)."""

    acc: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True, eq=False)
class ConfusionTensor:
    """``rates[y, y', a]`` estimates P(Yhat = y' | Y = y, A = a)."""

    rates: np.ndarray
    counts: np.ndarray


@dataclass
class MetricsReport:
    balanced_accuracy: float
    dca: float
    deo: float
    worst_group_accuracy: float
    cell_accuracies: np.ndarray
    variant: str = ""
    rho: float | None = None
    lam: float | None = None
    seed: int | None = None
    epochs: int | None = None
    extra: dict = field(default_factory=dict)

    # stable field order for JSON / CSV emission
    FIELDS = (
        "variant", "rho", "lambda", "seed", "epochs",
        "balanced_acc", "dca", "deo", "worst_group_acc", "cell_accuracies",
    )

    def to_dict(self):
        return {
            "variant": self.variant,
            "rho": self.rho,
            "lambda": self.lam,
            "seed": self.seed,
            "epochs": self.epochs,
            "balanced_acc": float(self.balanced_accuracy),
            "dca": float(self.dca),
            "deo": float(self.deo),
            "worst_group_acc": float(self.worst_group_accuracy),
            "cell_accuracies": np.asarray(self.cell_accuracies).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            balanced_accuracy=d["balanced_acc"],
            dca=d["dca"],
            deo=d["deo"],
            worst_group_accuracy=d["worst_group_acc"],
            cell_accuracies=np.asarray(d["cell_accuracies"], dtype=float),
            variant=d.get("variant", ""),
            rho=d.get("rho"),
            lam=d.get("lambda"),
            seed=d.get("seed"),
            epochs=d.get("epochs"),
        )


def _acc(cell_acc):
    return np.asarray(getattr(cell_acc, "acc", cell_acc), dtype=float)


def cell_accuracies(model, dataset, partition=None):
    partition = partition or partition_cells(dataset)
    pred = predict_class(model, dataset.features)
    ny, na = partition.counts.shape
    acc = np.empty((ny, na))
    for y in range(ny):
        for a in range(na):
            idx = partition.cells[y][a]
            acc[y, a] = np.count_nonzero(pred[idx] == y) / len(idx)
    return CellAccuracyMatrix(acc, np.array(partition.counts))


def confusion_rates(model, dataset, partition=None):
    partition = partition or partition_cells(dataset)
    pred = predict_class(model, dataset.features)
    ny, na = partition.counts.shape
    rates = np.zeros((ny, ny, na))
    for y in range(ny):
        for a in range(na):
            idx = partition.cells[y][a]
            rates[y, :, a] = np.bincount(pred[idx], minlength=ny) / len(idx)
    return ConfusionTensor(rates, np.array(partition.counts))


def _max_gap(v, axis=-1):
    return np.max(v, axis=axis) - np.min(v, axis=axis)


def dca(cell_acc):
    """Mean over classes of the largest between-group accuracy gap."""
    return float(np.mean(_max_gap(_acc(cell_acc), axis=1)))


def deo(conf):
    rates = np.asarray(getattr(conf, "rates", conf), dtype=float)
    return float(np.mean(_max_gap(rates, axis=2)))


def balanced_accuracy(cell_acc):
    return float(np.mean(_acc(cell_acc)))


def worst_group_accuracy(cell_acc):
    return float(np.min(_acc(cell_acc)))


def groupwise_losses(model, dataset, partition, y, loss_kind=ZERO_ONE):
    """Mean loss of each group's rows within class ``y``; length |A|."""
    if not 0 <= y < partition.num_classes:
        raise FairDROError(f"class index {y} out of range")
    out = np.empty(partition.num_groups)
    for a, idx in enumerate(partition.cells[y]):
        x = dataset.features[idx]
        if loss_kind == ZERO_ONE:
            out[a] = np.mean(predict_class(model, x) != y)
        elif loss_kind == CROSS_ENTROPY:
            out[a] = np.mean(per_sample_cross_entropy(model, x, np.full(len(idx), y)))
        else:
            raise FairDROError(f"unknown loss kind {loss_kind!r}")
    return out


def all_groupwise_losses(model, dataset, partition, loss_kind=ZERO_ONE):
    """|Y| x |A| matrix of per-cell mean losses."""
    return np.stack(
        [groupwise_losses(model, dataset, partition, y, loss_kind) for y in range(partition.num_classes)]
    )


def loss_variance(losses):
    """Population variance (divisor |A|), via pairwise differences.

    The pairwise form is exactly 0 for constant vectors, where the
    mean-centred form can leave a rounding residue.
    """
    v = np.asarray(losses, dtype=float)
    return float(np.sum((v[:, None] - v[None, :]) ** 2) / (2 * len(v) ** 2))


def dca_variance_bounds(losses_per_class):
    """Per class: (sqrt(2 Var), max pairwise gap, sqrt(2 |A|^2 Var))."""
    out = []
    for losses in losses_per_class:
        v = np.asarray(losses, dtype=float)
        var = loss_variance(v)
        out.append((math.sqrt(2.0 * var), float(_max_gap(v)), math.sqrt(2.0 * len(v) ** 2 * var)))
    return out


def evaluate(model, dataset, partition=None, **provenance):
    partition = partition or partition_cells(dataset)
    cells = cell_accuracies(model, dataset, partition)
    return MetricsReport(
        balanced_accuracy=balanced_accuracy(cells),
        dca=dca(cells),
        deo=deo(confusion_rates(model, dataset, partition)),
        worst_group_accuracy=worst_group_accuracy(cells),
        cell_accuracies=cells.acc,
        **provenance,
    )
