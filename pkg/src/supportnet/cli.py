"""Command-line entry point: single runs, sweeps and method comparisons.

Every command writes a manifest before any training starts, then emits
metrics.csv (one row per increment), per-increment confusion matrices,
the accuracy matrix, the support-set audit, timings and a final
checkpoint. Rerunning a command into a fresh directory reproduces every
CSV byte for byte; wall-clock numbers live in their own file so the rest
stays deterministic.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import RunConfig, load_config, load_datasets
from .data import Dataset
from .engine import ExperimentLog, MethodConfig, run_experiment_full
from .errors import (
    ConfigError,
    DataFormatError,
    ParameterError,
    ScheduleError,
    SelectionError,
    ShapeError,
    SupportNetError,
    TrainingDivergedError,
)
from .metrics import write_matrix_csv
from .network import save_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_DATA_ERRORS = (DataFormatError, ScheduleError, SelectionError, OSError, ShapeError)


def _fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.features).tobytes())
    h.update(np.ascontiguousarray(dataset.labels).tobytes())
    return h.hexdigest()


def _write_manifest(out_dir, run: RunConfig, train, test, extra=None) -> None:
    manifest = {
        "code_version": __version__,
        "seed": run.method.seed,
        "config": {
            "data": {
                "source": run.source,
                "schedule": run.schedule,
                "data_seed": run.data_seed,
            },
            "method": dataclasses.asdict(run.method),
        },
        "dataset_fingerprints": {
            "train": _fingerprint(train),
            "test": _fingerprint(test),
        },
        "outputs": [
            "metrics.csv",
            "timings.csv",
            "log.json",
            "accuracy_matrix_<method>.csv",
            "confusion_<increment>.csv",
            "support_audit_<increment>.csv",
            "model_final.ckpt",
        ],
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


_METRIC_COLUMNS = [
    "increment",
    "new_classes",
    "test_accuracy",
    "kappa",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "diag_real_training",
    "diag_all_training",
    "diag_test",
    "train_set_size",
    "support_size",
    "svm_kkt_violation",
]


def _write_outputs(out_dir, log: ExperimentLog, model, state) -> None:
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_METRIC_COLUMNS)
        for r in log.records:
            writer.writerow(
                [
                    r.increment,
                    " ".join(str(c) for c in r.new_classes),
                    repr(r.test_accuracy),
                    repr(r.kappa),
                    repr(r.macro_precision),
                    repr(r.macro_recall),
                    repr(r.macro_f1),
                    repr(r.diag_real_training),
                    repr(r.diag_all_training),
                    repr(r.diag_test),
                    r.train_set_size,
                    r.support_size,
                    "" if r.svm_kkt_violation is None else repr(r.svm_kkt_violation),
                ]
            )
    with open(os.path.join(out_dir, "timings.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["increment", "train_seconds"])
        for r in log.records:
            writer.writerow([r.increment, repr(r.train_seconds)])
    with open(os.path.join(out_dir, "log.json"), "w") as f:
        f.write(log.to_json())

    batch_names = [f"batch_{'_'.join(str(c) for c in g)}" for g in log.schedule]
    write_matrix_csv(
        os.path.join(out_dir, f"accuracy_matrix_{log.method}.csv"),
        log.accuracy_matrix(),
        "increment",
        batch_names,
    )
    for r in log.records:
        class_names = [f"class_{c}" for c in r.seen_classes]
        write_matrix_csv(
            os.path.join(out_dir, f"confusion_{r.increment}.csv"),
            r.confusion,
            "true\\pred",
            class_names,
        )
        if r.support_audit:
            with open(
                os.path.join(out_dir, f"support_audit_{r.increment}.csv"), "w", newline=""
            ) as f:
                writer = csv.writer(f)
                writer.writerow(["class", "dataset_index", "margin", "was_support_vector"])
                for cls, idx, margin, was_sv in r.support_audit:
                    writer.writerow([cls, idx, repr(margin), int(was_sv)])
    if model is not None:
        save_checkpoint(os.path.join(out_dir, "model_final.ckpt"), model, state)


def _execute(run: RunConfig, out_dir, method_override: MethodConfig | None = None):
    os.makedirs(out_dir, exist_ok=True)
    train, test = load_datasets(run)
    if method_override is not None:
        run = dataclasses.replace(run, method=method_override)
    _write_manifest(out_dir, run, train, test)
    log, model, state = run_experiment_full(run.method, train, test, run.schedule)
    _write_outputs(out_dir, log, model, state)
    return log


def _with_method(run: RunConfig, **overrides) -> MethodConfig:
    base = dataclasses.asdict(run.method)
    base.update(overrides)
    base["hidden_dims"] = tuple(base["hidden_dims"])
    return MethodConfig(**base)


def _sub_run(args):
    """Worker for parallel sweeps; must stay module-level picklable."""
    run, out_dir, overrides = args
    method = _with_method(run, **overrides)
    log = _execute(run, out_dir, method)
    return log.final_accuracy, log.total_train_seconds


def _run_many(run: RunConfig, jobs, parallel: int):
    """jobs: list of (out_dir, overrides). Returns final accuracies in order."""
    args = [(run, out_dir, ov) for out_dir, ov in jobs]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_sub_run, args))
    return [_sub_run(a) for a in args]


def cmd_run(run: RunConfig, out_dir: str, parallel: int = 1) -> int:
    _execute(run, out_dir)
    return EXIT_OK


def cmd_sweep_support_size(run: RunConfig, out_dir: str, sizes, parallel: int = 1) -> int:
    """One run per support size plus an all-data reference at matched epochs."""
    if not sizes:
        raise ConfigError("sweep needs at least one size")
    if any(s <= 0 for s in sizes) or sorted(sizes) != list(sizes):
        raise ConfigError("sizes must be positive and ascending")
    os.makedirs(out_dir, exist_ok=True)
    jobs = [
        (os.path.join(out_dir, f"size_{s}"), {"method": run.method.method, "budget": s})
        for s in sizes
    ]
    jobs.append(
        (
            os.path.join(out_dir, "all_data_reference"),
            {"method": "all_data", "all_data_epochs": run.method.epochs},
        )
    )
    results = _run_many(run, jobs, parallel)
    reference = results[-1][0]
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["support_size", "final_accuracy", "all_data_accuracy", "deviation"])
        for s, (acc, _) in zip(sizes, results):
            writer.writerow([s, repr(acc), repr(reference), repr(reference - acc)])
    return EXIT_OK


def cmd_sweep_ewc(run: RunConfig, out_dir: str, coefficients, parallel: int = 1) -> int:
    """One run per EWC coefficient; summary mirrors the five-criteria table."""
    if not coefficients:
        raise ConfigError("sweep needs at least one coefficient")
    if any(c <= 0 for c in coefficients):
        raise ConfigError("coefficients must be positive")
    os.makedirs(out_dir, exist_ok=True)
    jobs = [
        (os.path.join(out_dir, f"ewc_{c:g}"), {"method": "supportnet", "lambda_ewc": c})
        for c in coefficients
    ]
    args = [(run, d, ov) for d, ov in jobs]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            logs = list(pool.map(_sweep_ewc_worker, args))
    else:
        logs = [_sweep_ewc_worker(a) for a in args]
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["lambda_ewc", "accuracy", "kappa_score", "macro_f1", "macro_precision", "macro_recall"]
        )
        for c, row in zip(coefficients, logs):
            writer.writerow([f"{c:g}"] + [repr(v) for v in row])
    return EXIT_OK


def _sweep_ewc_worker(args):
    run, out_dir, overrides = args
    method = _with_method(run, **overrides)
    log = _execute(run, out_dir, method)
    final = log.records[-1]
    return (
        final.test_accuracy,
        final.kappa,
        final.macro_f1,
        final.macro_precision,
        final.macro_recall,
    )


def cmd_compare(run: RunConfig, out_dir: str, parallel: int = 1) -> int:
    """Run every configured method on the same data, schedule and seed."""
    methods = run.methods
    if len(methods) < 2:
        raise ConfigError("compare needs a methods list with at least 2 entries")
    os.makedirs(out_dir, exist_ok=True)
    args = [
        (run, os.path.join(out_dir, m), {"method": m, "seed": run.method.seed})
        for m in methods
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            logs = list(pool.map(_compare_worker, args))
    else:
        logs = [_compare_worker(a) for a in args]
    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["increment"] + methods)
        for t in range(len(logs[0])):
            writer.writerow([t] + [repr(acc[t]) for acc in logs])
    return EXIT_OK


def _compare_worker(args):
    run, out_dir, overrides = args
    method = _with_method(run, **overrides)
    log = _execute(run, out_dir, method)
    # accuracy matrix also lands next to the comparison table
    import shutil

    src = os.path.join(out_dir, f"accuracy_matrix_{log.method}.csv")
    shutil.copy(src, os.path.join(os.path.dirname(out_dir), f"accuracy_matrix_{log.method}.csv"))
    return [r.test_accuracy for r in log.records]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supportnet",
        description="Class-incremental learning experiments with support-data rehearsal.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run one experiment from a config file"),
        ("sweep-support", "sweep the support-data budget"),
        ("sweep-ewc", "sweep the EWC regularizer coefficient"),
        ("compare", "run several methods on the same schedule"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--parallel", type=int, default=1, help="parallel sub-runs for sweeps")
        if name == "sweep-support":
            p.add_argument("--sizes", type=_int_list, required=True, help="comma-separated budgets")
        if name == "sweep-ewc":
            p.add_argument("--coeffs", type=_float_list, required=True, help="comma-separated coefficients")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        run = load_config(args.config)
        if args.seed is not None:
            run = dataclasses.replace(run, method=_with_method(run, seed=args.seed))
        if args.command == "run":
            return cmd_run(run, args.out, args.parallel)
        if args.command == "sweep-support":
            return cmd_sweep_support_size(run, args.out, args.sizes, args.parallel)
        if args.command == "sweep-ewc":
            return cmd_sweep_ewc(run, args.out, args.coeffs, args.parallel)
        if args.command == "compare":
            return cmd_compare(run, args.out, args.parallel)
        return EXIT_CONFIG
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SupportNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
