"""Tabular data: loading, (class, group) cell partitioning, balanced sampling, splits.

Everything downstream indexes rows through a :class:`CellPartition`, i.e. the
lists of row indices falling in each (class ``y``, group ``a``) cell.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import (
    DivisibilityError,
    EmptyCellError,
    EmptyInputError,
    ParseError,
    SchemaError,
    SpecError,
    StratificationError,
)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    classes: np.ndarray
    groups: np.ndarray
    num_classes: int
    num_groups: int
    # original label value -> integer code, kept for auditability
    class_codes: dict = field(default_factory=dict)
    group_codes: dict = field(default_factory=dict)
    feature_names: tuple = ()

    def __post_init__(self):
        x = _frozen(self.features, float)
        if x.ndim != 2:
            raise SchemaError(f"features must be a 2-d matrix, got shape {x.shape}")
        y = _frozen(self.classes, np.int64)
        a = _frozen(self.groups, np.int64)
        n = x.shape[0]
        if n < 1:
            raise EmptyInputError("dataset has no rows")
        if y.shape != (n,) or a.shape != (n,):
            raise SchemaError("classes and groups must be length-N vectors")
        if self.num_classes < 2 or self.num_groups < 2:
            raise SchemaError("need at least 2 classes and 2 groups")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise SchemaError("class label out of range")
        if a.min() < 0 or a.max() >= self.num_groups:
            raise SchemaError("group label out of range")
        if not np.all(np.isfinite(x)):
            raise SchemaError("feature matrix contains non-finite entries")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "classes", y)
        object.__setattr__(self, "groups", a)
        if not self.feature_names:
            names = tuple(f"x{j}" for j in range(x.shape[1]))
            object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(
            self.features[rows],
            self.classes[rows],
            self.groups[rows],
            self.num_classes,
            self.num_groups,
            self.class_codes,
            self.group_codes,
            self.feature_names,
        )


@dataclass(frozen=True, eq=False)
class CellPartition:
    """Row indices per (y, a) cell. ``cells[y][a]`` is a sorted int array."""

    cells: tuple
    counts: np.ndarray

    @property
    def num_classes(self):
        return len(self.cells)

    @property
    def num_groups(self):
        return len(self.cells[0])

    def cell(self, y, a):
        return self.cells[y][a]


# ---------------------------------------------------------------- loading


def _code_labels(values):
    """Integer columns already coded 0..k-1 are kept; anything else gets
    dense codes in first-occurrence order."""
    ints = []
    for v in values:
        try:
            ints.append(int(v))
        except ValueError:
            ints = None
            break
    if ints is not None and set(ints) == set(range(len(set(ints)))):
        mapping = {str(k): k for k in sorted(set(ints))}
        return np.array(ints), mapping
    mapping = {}
    codes = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        if v not in mapping:
            mapping[v] = len(mapping)
        codes[i] = mapping[v]
    return codes, mapping


def load_csv(path, class_column, group_column):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    for col in (class_column, group_column):
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")

    ci, gi = header.index(class_column), header.index(group_column)
    feat_cols = [j for j in range(len(header)) if j not in (ci, gi)]
    x = np.empty((len(rows), len(feat_cols)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ParseError(f"{path}: row {i + 1} has {len(r)} fields, expected {len(header)}")
        for k, j in enumerate(feat_cols):
            try:
                x[i, k] = float(r[j])
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 1}, column {header[j]!r}: non-numeric value {r[j]!r}"
                ) from None
    y, ymap = _code_labels([r[ci].strip() for r in rows])
    a, amap = _code_labels([r[gi].strip() for r in rows])
    return LabeledDataset(
        x, y, a, len(ymap), len(amap), ymap, amap, tuple(header[j] for j in feat_cols)
    )


def write_csv(dataset, path, class_column="y", group_column="a"):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.feature_names, class_column, group_column])
        for xi, yi, ai in zip(dataset.features, dataset.classes, dataset.groups):
            w.writerow([*(repr(float(v)) for v in xi), int(yi), int(ai)])


# ------------------------------------------------------------ partitioning


def partition_cells(dataset):
    ny, na = dataset.num_classes, dataset.num_groups
    flat = dataset.classes * na + dataset.groups
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=ny * na).reshape(ny, na)
    empty = [(y, a) for y in range(ny) for a in range(na) if counts[y, a] == 0]
    if empty:
        raise EmptyCellError(empty)
    bounds = np.concatenate([[0], np.cumsum(counts.ravel())])
    cells = tuple(
        tuple(
            _frozen(order[bounds[y * na + a] : bounds[y * na + a + 1]], np.int64)
            for a in range(na)
        )
        for y in range(ny)
    )
    return CellPartition(cells, _frozen(counts, np.int64))


def balanced_batch(partition, batch_size, rng):
    """Draw ``batch_size / (|Y||A|)`` rows from every cell, with replacement.

    Returned indices are grouped cell by cell in (y, a) order.
    """
    n_cells = partition.num_classes * partition.num_groups
    if batch_size <= 0 or batch_size % n_cells:
        raise DivisibilityError(
            f"batch size {batch_size} is not a positive multiple of {n_cells} cells"
        )
    quota = batch_size // n_cells
    out = []
    for row in partition.cells:
        for idx in row:
            out.append(idx[rng.integers(0, len(idx), size=quota)])
    return np.concatenate(out)


def split(dataset, test_fraction, rng):
    """Stratified train/test split, each (y, a) cell split independently."""
    if not 0.0 < test_fraction < 1.0:
        raise StratificationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    part = partition_cells(dataset)
    train, test = [], []
    for y, row in enumerate(part.cells):
        for a, idx in enumerate(row):
            n = len(idx)
            if n < 2:
                raise StratificationError(f"cell (y={y}, a={a}) has {n} row(s); cannot split")
            n_test = min(max(int(math.floor(n * test_fraction + 0.5)), 1), n - 1)
            perm = rng.permutation(idx)
            test.append(perm[:n_test])
            train.append(perm[n_test:])
    return (
        dataset.subset(np.sort(np.concatenate(train))),
        dataset.subset(np.sort(np.concatenate(test))),
    )


# --------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian class clusters with group-dependent noise.

    Class ``y`` is centred at ``separation * (e_y + e_{|Y|+y}) / sqrt(2)``, so
    the class signal is carried by two orthogonal copies. Noise on the first
    copy (and on every trailing nuisance coordinate) has standard deviation
    ``group_noise_scales[a]``; noise on the second copy is ``shared_noise_scale``
    for every group (defaults to the mean group scale). A linear model can
    therefore trade accuracy for parity by moving weight between the copies.
    """

    num_classes: int = 2
    num_groups: int = 2
    feature_dim: int = 10
    cell_counts: tuple = ((625, 625), (625, 625))
    class_mean_separation: float = 4.0
    group_noise_scales: tuple = (1.0, 3.0)
    seed: int = 0
    shared_noise_scale: float | None = None

    def to_dict(self):
        d = asdict(self)
        d["cell_counts"] = [list(r) for r in self.cell_counts]
        d["group_noise_scales"] = list(self.group_noise_scales)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cell_counts"] = tuple(tuple(int(v) for v in r) for r in d["cell_counts"])
        d["group_noise_scales"] = tuple(float(v) for v in d["group_noise_scales"])
        return cls(**d)

    def validate(self):
        ny, na = self.num_classes, self.num_groups
        if ny < 2 or na < 2:
            raise SpecError("need at least 2 classes and 2 groups")
        if self.feature_dim < 2 * ny:
            raise SpecError(f"feature_dim must be >= 2 * num_classes = {2 * ny}")
        counts = np.asarray(self.cell_counts)
        if counts.shape != (ny, na):
            raise SpecError(f"cell_counts must be {ny}x{na}, got shape {counts.shape}")
        if np.any(counts < 1):
            raise SpecError("every cell count must be >= 1")
        scales = np.asarray(self.group_noise_scales, dtype=float)
        if scales.shape != (na,) or not np.all(np.isfinite(scales)) or np.any(scales < 0):
            raise SpecError("group_noise_scales must be num_groups finite values >= 0")
        sep = self.class_mean_separation
        if not (math.isfinite(sep) and sep > 0):
            raise SpecError("class_mean_separation must be finite and > 0")
        shared = self.shared_noise_scale
        if shared is not None and not (math.isfinite(shared) and shared >= 0):
            raise SpecError("shared_noise_scale must be finite and >= 0")


def generate_synthetic(spec):
    spec.validate()
    ny, na, d = spec.num_classes, spec.num_groups, spec.feature_dim
    scales = np.asarray(spec.group_noise_scales, dtype=float)
    shared = float(scales.mean()) if spec.shared_noise_scale is None else spec.shared_noise_scale
    rng = np.random.default_rng(spec.seed)

    xs, ys, as_ = [], [], []
    for y in range(ny):
        mean = np.zeros(d)
        mean[y] = mean[ny + y] = spec.class_mean_separation / math.sqrt(2.0)
        for a in range(na):
            n = int(spec.cell_counts[y][a])
            std = np.full(d, scales[a])
            std[ny : 2 * ny] = shared
            xs.append(mean + rng.standard_normal((n, d)) * std)
            ys.append(np.full(n, y))
            as_.append(np.full(n, a))
    perm = rng.permutation(sum(len(v) for v in ys))
    return LabeledDataset(
        np.concatenate(xs)[perm],
        np.concatenate(ys)[perm],
        np.concatenate(as_)[perm],
        ny,
        na,
    )
