"""Experiment runs, hyperparameter sweeps, Pareto envelopes and model selection."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import SyntheticSpec, generate_synthetic, load_csv, split
from .errors import FairDROError, SpecError
from .metrics import MetricsReport, evaluate
from .trainer import DRO_VARIANTS, REG_VARIANTS, TrainConfig, train

CSV_COLUMNS = ("variant", "rho", "lambda", "seed", "balanced_acc", "dca", "deo", "worst_group_acc")
METRIC_KEYS = ("balanced_acc", "dca", "deo", "worst_group_acc")
DEFAULT_RHO_GRID = tuple(float(v) for v in np.logspace(-2, 2, 7))
# salt for the split stream, so it never coincides with the training stream
SPLIT_SALT = 0x5EED


@dataclass(frozen=True)
class DataSource:
    """Either a CSV file or a synthetic spec.

    With a synthetic spec the draw is seeded by ``spec.seed + run seed`` so
    averaging over run seeds also averages over data draws.
    """

    path: str | None = None
    class_column: str = "y"
    group_column: str = "a"
    synthetic: SyntheticSpec | None = None
    test_fraction: float = 0.2

    def load(self, seed):
        if self.path is not None:
            return load_csv(self.path, self.class_column, self.group_column)
        spec = self.synthetic or SyntheticSpec()
        return generate_synthetic(replace(spec, seed=spec.seed + seed))


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


def run_experiment(config, source=None, return_model=False):
    """load/generate -> split -> train -> evaluate on the test split."""
    source = source or DataSource()
    _stage("config", config.validate)
    data = _stage("load", source.load, config.seed)
    rng = np.random.default_rng([config.seed, SPLIT_SALT])
    train_data, test_data = _stage("split", split, data, source.test_fraction, rng)
    model, history = _stage("train", train, config, train_data, test_data)
    report = _stage(
        "evaluate",
        lambda: evaluate(
            model,
            test_data,
            variant=config.variant,
            rho=config.rho if config.variant in DRO_VARIANTS else None,
            lam=config.lam if config.variant in REG_VARIANTS else None,
            seed=config.seed,
            epochs=config.epochs,
        ),
    )
    if return_model:
        return report, model, history
    return report


# ------------------------------------------------------------------ sweep


@dataclass
class SweepEntry:
    config: dict
    mean: MetricsReport
    per_seed: list
    std: dict

    @property
    def hyperparameter(self):
        v = self.config.get("rho") if self.config["variant"] in DRO_VARIANTS else self.config.get("lambda")
        return v if v is not None else 0.0


@dataclass
class SweepResult:
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def runs(self):
        for e in self.entries:
            yield from e.per_seed


def sweep_parameter(variant):
    if variant in DRO_VARIANTS and variant != "group_dro":
        return "rho"
    if variant == "group_dro":
        return "eg_step"
    if variant in REG_VARIANTS:
        return "lam"
    return None


def _config_summary(cfg):
    return {
        "variant": cfg.variant,
        "rho": cfg.rho if cfg.variant in DRO_VARIANTS else None,
        "lambda": cfg.lam if cfg.variant in REG_VARIANTS else None,
        "eg_step": cfg.eg_step if cfg.variant == "group_dro" else None,
        "epochs": cfg.epochs,
        "smoothing": cfg.smoothing,
    }


def _run_point(args):
    cfg, source = args
    try:
        return run_experiment(cfg, source), None
    except FairDROError as exc:
        return None, {"stage": getattr(exc, "stage", None), "error": str(exc)}


def average_reports(reports, cfg):
    """Seed-averaged report plus across-seed standard deviations."""
    arr = {k: np.array([r.to_dict()[k] for r in reports], dtype=float) for k in METRIC_KEYS}
    cells = np.mean([r.cell_accuracies for r in reports], axis=0)
    mean = MetricsReport(
        balanced_accuracy=float(arr["balanced_acc"].mean()),
        dca=float(arr["dca"].mean()),
        deo=float(arr["deo"].mean()),
        worst_group_accuracy=float(arr["worst_group_acc"].mean()),
        cell_accuracies=cells,
        variant=cfg.variant,
        rho=reports[0].rho,
        lam=reports[0].lam,
        seed=None,
        epochs=cfg.epochs,
    )
    std = {k: float(v.std()) for k, v in arr.items()}
    return mean, std


def sweep(base_config, grid=None, seeds=(0, 1, 2, 3), source=None, workers=1):
    """One run per (grid value, seed), grid order preserved; failures are recorded, not raised.

    ``grid`` values go to rho, lambda or eg_step depending on the variant;
    variants without a hyperparameter run a single point.
    """
    seeds = list(seeds)
    if not seeds:
        raise SpecError("sweep needs at least one seed")
    param = sweep_parameter(base_config.variant)
    if param is None:
        grid = [None]
    elif grid is None:
        grid = list(DEFAULT_RHO_GRID)
    grid = list(grid)
    if not grid:
        raise SpecError("sweep needs a non-empty grid")

    configs = []
    for value in grid:
        cfg = base_config if value is None else replace(base_config, **{param: float(value)})
        configs.append(cfg)
    jobs = [(replace(cfg, seed=s), source) for cfg in configs for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_point, jobs))
    else:
        outcomes = [_run_point(j) for j in jobs]

    result = SweepResult()
    for gi, cfg in enumerate(configs):
        chunk = outcomes[gi * len(seeds) : (gi + 1) * len(seeds)]
        ok = [r for r, _ in chunk if r is not None]
        for (job_cfg, _), (_, err) in zip(jobs[gi * len(seeds) :], chunk):
            if err is not None:
                result.failures.append({**_config_summary(job_cfg), "seed": job_cfg.seed, **err})
        if ok:
            mean, std = average_reports(ok, cfg)
            result.entries.append(SweepEntry(_config_summary(cfg), mean, ok, std))
    return result


# ----------------------------------------------------------------- Pareto


def pareto_envelope(points):
    """Return ``(frontier, hull)`` for (dca, balanced_acc) points.

    ``frontier`` holds the non-dominated points (lower DCA and higher accuracy
    are better), ``hull`` the upper-left convex envelope of the frontier. Both
    are sorted by increasing DCA.
    """
    pts = sorted({(float(d), float(a)) for d, a in points}, key=lambda p: (p[0], -p[1]))
    frontier = []
    best_acc = -math.inf
    for d, a in pts:
        # sorted by dca then acc desc: a point survives only if it beats every lower-dca accuracy
        if a > best_acc:
            frontier.append((d, a))
            best_acc = a
    hull = []
    for p in frontier:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return frontier, hull


# -------------------------------------------------------------- selection


@dataclass
class Selection:
    entry: SweepEntry
    feasible: bool
    threshold: float


def _pick(candidates, scratch_accuracy, acc_of, dca_of, hyper_of):
    threshold = 0.95 * scratch_accuracy
    ok = [c for c in candidates if acc_of(c) >= threshold]
    if ok:
        best = min(ok, key=lambda c: (dca_of(c), -acc_of(c), hyper_of(c)))
        return best, True, threshold
    best = min(candidates, key=lambda c: (-acc_of(c), dca_of(c), hyper_of(c)))
    return best, False, threshold


def select_model(sweep_result, scratch_accuracy):
    """Lowest-DCA entry keeping >= 95% of the scratch balanced accuracy.

    Falls back to the most accurate entry, flagged infeasible, when nothing
    clears the threshold.
    """
    if not 0 < scratch_accuracy <= 1:
        raise SpecError(f"scratch accuracy must be in (0, 1], got {scratch_accuracy}")
    if not sweep_result.entries:
        raise SpecError("cannot select from an empty sweep")
    entry, feasible, thr = _pick(
        sweep_result.entries,
        scratch_accuracy,
        lambda e: e.mean.balanced_accuracy,
        lambda e: e.mean.dca,
        lambda e: e.hyperparameter,
    )
    return Selection(entry, feasible, thr)


def select_model_per_seed(sweep_result, scratch_accuracy_by_seed):
    """Apply the selection rule separately for every seed.

    Returns ``{seed: (report, feasible)}``; used to check how sensitive the
    seed-averaged choice is.
    """
    out = {}
    for seed, scratch_acc in scratch_accuracy_by_seed.items():
        reports = [r for e in sweep_result.entries for r in e.per_seed if r.seed == seed]
        if not reports:
            continue
        best, feasible, _ = _pick(
            reports,
            scratch_acc,
            lambda r: r.balanced_accuracy,
            lambda r: r.dca,
            lambda r: (r.rho if r.rho is not None else r.lam) or 0.0,
        )
        out[seed] = (best, feasible)
    return out


# ---------------------------------------------------------------- reports


def _summary(result, selection=None):
    points = [
        {**e.config, "seeds": len(e.per_seed), "mean": e.mean.to_dict(), "std": e.std}
        for e in result.entries
    ]
    frontier, hull = pareto_envelope(
        [(e.mean.dca, e.mean.balanced_accuracy) for e in result.entries]
    ) if result.entries else ([], [])
    out = {
        "points": points,
        "pareto_frontier": [list(p) for p in frontier],
        "pareto_hull": [list(p) for p in hull],
        "failures": result.failures,
    }
    if selection is not None:
        out["selection"] = {
            **selection.entry.config,
            "feasible": selection.feasible,
            "accuracy_threshold": selection.threshold,
            "mean": selection.entry.mean.to_dict(),
        }
    return out


def emit_report(result, path, fmt="json", selection=None):
    """Write a MetricsReport or SweepResult as JSON (runs + summary) or CSV (one row per run)."""
    if isinstance(result, MetricsReport):
        result = SweepResult(
            [SweepEntry({"variant": result.variant, "rho": result.rho, "lambda": result.lam},
                        result, [result], {k: 0.0 for k in METRIC_KEYS})]
        )
    path = Path(path)
    try:
        if fmt == "json":
            doc = {"runs": [r.to_dict() for r in result.runs()], "summary": _summary(result, selection)}
            path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        elif fmt == "csv":
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for r in result.runs():
                    d = r.to_dict()
                    w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c])
                                for c in CSV_COLUMNS])
        else:
            raise SpecError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_csv_report(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in CSV_COLUMNS[1:]:
            if r[k] == "":
                r[k] = None
            elif k == "seed":
                r[k] = int(r[k])
            else:
                r[k] = float(r[k])
    return rows
