"""Command-line harness: ``trevision {gen-data,corrupt,train,report}``.

Exit codes: 0 success, 2 config error, 3 data or I/O error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datasets import save_csv
from .errors import ConfigError, DataError, NumericError, TRevisionError
from .noise import corrupt_labels
from .report import write_report, write_run
from .revision import derive_seed, load_source, run_t_revision, true_transition

log = logging.getLogger("trevision")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig().validate()
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    return cfg


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"output path {out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    if cfg.data.source != "gaussian":
        raise ConfigError("gen-data needs a gaussian data source")
    out = _prepare_out(args.out or cfg.output_dir, args.force)
    seed = cfg.seeds[0]
    pool, test = load_source(cfg, seed)
    save_csv(pool, out / "train.csv")
    if test is not None:
        save_csv(test, out / "test.csv")
    _write_json(out / "data.json", {"seed": seed, "n_train": len(pool), "n_test": 0 if test is None else len(test),
                                    "num_classes": pool.num_classes, "data": cfg.to_dict()["data"]})
    log.info("wrote %d training and %d test instances to %s", len(pool), 0 if test is None else len(test), out)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = _load_config(args)
    if cfg.data.labels_are_noisy:
        raise ConfigError("labels_are_noisy data cannot be corrupted again")
    out = _prepare_out(args.out or cfg.output_dir, args.force)
    seed = cfg.seeds[0]
    pool, _ = load_source(cfg, seed)
    T = true_transition(cfg, pool.num_classes)
    noisy = corrupt_labels(pool.clean_labels, T, derive_seed(seed, "noise"))
    save_csv(pool, out / "clean.csv")
    save_csv(pool.with_noisy_labels(noisy), out / "noisy.csv", label_kind="noisy")
    flip_rate = float(np.mean(noisy != pool.clean_labels)) if len(noisy) else 0.0
    _write_json(out / "corruption.json", {"seed": seed, "T_true": T.tolist(), "flip_rate": flip_rate,
                                          "n": len(noisy), "noise": cfg.to_dict()["noise"]})
    log.info("flipped %.4f of %d labels", flip_rate, len(noisy))
    return EXIT_OK


def _train_one(cfg: ExperimentConfig, seed: int, out: Path) -> tuple[int, float]:
    report = run_t_revision(cfg, seed)
    run_cfg = ExperimentConfig.from_dict(cfg.to_dict())
    run_cfg.seeds = [seed]
    write_run(report, out / f"seed_{seed}", run_cfg)
    return seed, report.test_accuracy


def max_workers(n_jobs: int) -> int:
    raw = os.environ.get("TREV_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"TREV_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError("TREV_THREADS must be at least 1")
    return min(cap, n_jobs)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args.out or Path(cfg.output_dir) / cfg.method, args.force)
    workers = max_workers(len(cfg.seeds))
    if workers == 1:
        results = [_train_one(cfg, s, out) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_train_one, [cfg] * len(cfg.seeds), cfg.seeds, [out] * len(cfg.seeds)))
    for seed, acc in results:
        log.info("%s seed %d: clean test accuracy %.4f", cfg.method, seed, acc)
    return EXIT_OK


def cmd_report(args) -> int:
    out = _prepare_out(args.out, args.force)
    table, curves, runs = write_report(args.runs, out)
    if args.figures:
        from .plotting import plot_accuracy, plot_estimation_curves
        from .report import curve_rows

        plot_estimation_curves(curve_rows(runs), out / "estimation_error.png")
        plot_accuracy(runs, out / "accuracy.png")
    print(table.read_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trevision", description="Transition-matrix revision for noisy labels.")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        if seed:
            sp.add_argument("--seed", type=int, help="run this single seed instead of the config's seeds")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", help="write into a non-empty output directory")

    common(sub.add_parser("gen-data", parents=[shared], help="sample a Gaussian-mixture dataset to CSV"))
    common(sub.add_parser("corrupt", parents=[shared], help="flip training labels with the configured transition matrix"))
    common(sub.add_parser("train", parents=[shared], help="run the configured method for each seed"))
    rp = sub.add_parser("report", parents=[shared], help="aggregate run directories into comparison CSVs")
    rp.add_argument("runs", nargs="+", help="run directories, or parents of seed_* directories")
    rp.add_argument("--out", required=True)
    rp.add_argument("--force", action="store_true")
    rp.add_argument("--figures", action="store_true", help="also render PNG figures")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "corrupt": cmd_corrupt, "train": cmd_train, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TRevisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
