"""Command line: ``fairdro {train,sweep,eval,synth}``.

A ``--config`` file holds flat ``key = value`` lines whose keys are the long
flag names without the leading dashes (``rho = 0.5``, ``class-col = income``).
Explicit flags override file values.
"""
from __future__ import annotations

import argparse
import json
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import SyntheticSpec, generate_synthetic, split, write_csv
from .errors import FairDROError
from .harness import (
    SPLIT_SALT,
    DataSource,
    SweepEntry,
    SweepResult,
    average_reports,
    emit_report,
    run_experiment,
    select_model,
    sweep,
    sweep_parameter,
)
from .metrics import evaluate
from .model import load_model, save_model
from .trainer import VARIANTS, TrainConfig

LIST_KEYS = {"seeds": int, "grid": float}
BOOL_KEYS = {"no_smoothing"}


def read_config(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FairDROError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key in LIST_KEYS:
            values[key] = [LIST_KEYS[key](v) for v in value.replace(",", " ").split()]
        elif key in BOOL_KEYS:
            values[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            values[key] = value
    return values


def _add_common(p):
    p.add_argument("--config", help="flat key = value file mirroring these flags")
    p.add_argument("--data", help="CSV file; omit to use the canonical synthetic data")
    p.add_argument("--synthetic-spec", help="JSON synthetic spec used when --data is absent")
    p.add_argument("--class-col", default="y")
    p.add_argument("--group-col", default="a")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def _add_training(p):
    p.add_argument("--variant", choices=VARIANTS, default="fairdro")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=70)
    p.add_argument("--iters", type=int, default=None, help="iterations per epoch")
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=1e-3)
    p.add_argument("--eg-step", type=float, default=0.1)
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])


def build_parser():
    parser = argparse.ArgumentParser(prog="fairdro")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="single training run, metrics on the test split")
    _add_common(p)
    _add_training(p)
    p.add_argument("--save-model", help="write the trained model checkpoint here")
    p.add_argument("--history", help="write per-epoch history as JSON lines here")

    p = sub.add_parser("sweep", help="hyperparameter grid x seeds, with model selection")
    _add_common(p)
    _add_training(p)
    p.add_argument("--grid", type=float, nargs="+", default=None)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="metrics of a saved model on a dataset")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])

    p = sub.add_parser("synth", help="write a synthetic dataset to CSV")
    p.add_argument("--config")
    p.add_argument("--synthetic-spec")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", required=True)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        file_values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(file_values) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**file_values)
        args = parser.parse_args(argv)
    return args


def _synthetic_spec(args):
    if getattr(args, "synthetic_spec", None):
        return SyntheticSpec.from_dict(json.loads(Path(args.synthetic_spec).read_text()))
    return SyntheticSpec()


def _source(args):
    return DataSource(
        path=args.data,
        class_column=args.class_col,
        group_column=args.group_col,
        synthetic=None if args.data else _synthetic_spec(args),
        test_fraction=args.test_fraction,
    )


def _config(args, seed):
    return TrainConfig(
        variant=args.variant,
        rho=args.rho,
        lam=args.lam,
        epochs=args.epochs,
        iterations_per_epoch=args.iters,
        batch_size=args.batch,
        base_lr=args.lr,
        weight_decay=args.wd,
        eg_step=args.eg_step,
        seed=seed,
        smoothing=not args.no_smoothing,
    )


def _emit(result, args, selection=None):
    if args.out:
        emit_report(result, args.out, args.format, selection)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            path = emit_report(result, Path(tmp) / "report", args.format, selection)
            sys.stdout.write(path.read_text())


def cmd_train(args):
    source = _source(args)
    reports = []
    for i, seed in enumerate(args.seeds):
        cfg = _config(args, seed)
        report, model, history = run_experiment(cfg, source, return_model=True)
        reports.append(report)
        # with several seeds, only the first run's artifacts are written
        if i == 0 and args.save_model:
            save_model(model, args.save_model)
        if i == 0 and args.history:
            history.to_jsonl(args.history)
    cfg = _config(args, args.seeds[0])
    mean, std = average_reports(reports, cfg)
    summary = {"variant": cfg.variant, "rho": mean.rho, "lambda": mean.lam}
    _emit(SweepResult([SweepEntry(summary, mean, reports, std)]), args)


def cmd_sweep(args):
    source = _source(args)
    base = _config(args, args.seeds[0])
    result = sweep(base, args.grid, args.seeds, source, args.workers)
    selection = None
    if sweep_parameter(base.variant) is not None and result.entries:
        scratch = sweep(replace(base, variant="scratch"), None, args.seeds, source, args.workers)
        if scratch.entries:
            selection = select_model(result, scratch.entries[0].mean.balanced_accuracy)
    _emit(result, args, selection)


def cmd_eval(args):
    model = load_model(args.model)
    source = _source(args)
    seed = args.seeds[0]
    data = source.load(seed)
    if args.data is None:
        # same held-out split a `train` run with this seed evaluates on
        _, data = split(data, source.test_fraction, np.random.default_rng([seed, SPLIT_SALT]))
    _emit(evaluate(model, data, variant="eval", seed=seed), args)


def cmd_synth(args):
    spec = _synthetic_spec(args)
    spec = replace(spec, seed=spec.seed + args.seeds[0])
    write_csv(generate_synthetic(spec), args.out)


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval, "synth": cmd_synth}


def main(argv=None):
    args = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        COMMANDS[args.command](args)
    except (FairDROError, OSError) as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"[{stage}] " if stage else ""
        print(f"fairdro: error: {prefix}{exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
