"""On-disk run reports and multi-run aggregation.

A run directory holds::

    summary.txt             key = value lines
    config.json             the resolved config for this seed
    history.csv             revision-stage metrics per epoch
    history_stage1.csv      stage 1 metrics per epoch
    history_init.csv        stage 2 initialisation metrics per epoch
    transition_init.txt     T_hat (absent for the unweighted method)
    transition_revised.txt  T_hat + delta_T
    delta_T.txt
    anchors.csv
    model.bin               see :func:`write_model`

Floats are written with ``repr`` so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import AggregationError, DataFormatError
from .noise import save_transition
from .numerics import MLP
from .revision import RunReport

HISTORY_COLUMNS = ("epoch", "noisy_val_error", "reweighted_train_risk", "estimation_error", "clean_test_accuracy")
STAGE_COLUMNS = ("epoch", "noisy_val_error", "train_risk")

MODEL_MAGIC = b"TRVM"
MODEL_VERSION = 1
_ACTIVATION_CODES = {"relu": 0, "identity": 1}


def fmt(value) -> str:
    """Deterministic text form of a metric; missing values become an empty field."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    v = float(value)
    return "" if math.isnan(v) else repr(v)


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def history_columns(history) -> tuple[str, ...]:
    """Known columns present in ``history``; the optional ones only when populated."""
    present = set().union(*history) if history else set()
    return tuple(c for c in HISTORY_COLUMNS if c in present or c in HISTORY_COLUMNS[:3])


# -- model.bin ---------------------------------------------------------------


def write_model(model: MLP, path) -> None:
    """Serialise ``model`` as little-endian binary.

    Layout: magic ``TRVM``; uint32 version, activation code (0 relu,
    1 identity), has-bias flag and depth d; d+1 uint32 layer widths
    (input first); then each weight matrix as row-major float64 with shape
    (out, in); then, if present, each bias vector as float64.
    """
    sizes = [model.input_dim] + [W.shape[0] for W in model.weights]
    parts = [
        MODEL_MAGIC,
        struct.pack("<4I", MODEL_VERSION, _ACTIVATION_CODES[model.activation],
                    int(model.biases is not None), model.depth),
        struct.pack(f"<{len(sizes)}I", *sizes),
    ]
    parts += [np.ascontiguousarray(W, dtype="<f8").tobytes() for W in model.weights]
    if model.biases is not None:
        parts += [np.ascontiguousarray(b, dtype="<f8").tobytes() for b in model.biases]
    Path(path).write_bytes(b"".join(parts))


def read_model(path) -> MLP:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise DataFormatError("not a model file (bad magic)", path=path, offset=0)
    if len(data) < 20:
        raise DataFormatError("truncated header", path=path, offset=len(data))
    version, act, has_bias, depth = struct.unpack_from("<4I", data, 4)
    if version != MODEL_VERSION:
        raise DataFormatError(f"unsupported model version {version}", path=path, offset=4)
    codes = {v: k for k, v in _ACTIVATION_CODES.items()}
    if act not in codes:
        raise DataFormatError(f"unknown activation code {act}", path=path, offset=8)
    off = 20
    if len(data) < off + 4 * (depth + 1):
        raise DataFormatError("truncated layer sizes", path=path, offset=len(data))
    sizes = struct.unpack_from(f"<{depth + 1}I", data, off)
    off += 4 * (depth + 1)
    n_weights = sum(sizes[k] * sizes[k + 1] for k in range(depth))
    expected = off + 8 * (n_weights + (sum(sizes[1:]) if has_bias else 0))
    if len(data) != expected:
        raise DataFormatError(f"expected {expected} bytes, found {len(data)}", path=path, offset=min(len(data), expected))

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        return arr

    weights = [take(sizes[k + 1] * sizes[k], (sizes[k + 1], sizes[k])) for k in range(depth)]
    biases = [take(sizes[k + 1], (sizes[k + 1],)) for k in range(depth)] if has_bias else None
    return MLP(weights, biases, codes[act])


# -- run directories ---------------------------------------------------------


def summary_items(report: RunReport) -> list[tuple[str, str]]:
    items = [
        ("method", report.method),
        ("seed", str(report.seed)),
        ("fingerprint", report.fingerprint),
        ("selected_epoch", str(report.selected_epoch)),
        ("test_accuracy", fmt(report.test_accuracy)),
        ("n_train", str(report.n_train)),
        ("n_val", str(report.n_val)),
        ("removed_anchors", str(report.removed)),
        ("init_estimation_error", fmt(report.init_estimation_error())),
        ("final_estimation_error", fmt(report.final_estimation_error())),
    ]
    return items


def write_run(report: RunReport, out_dir, config: ExperimentConfig | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "history.csv", history_columns(report.history), report.history)
    write_rows(out / "history_stage1.csv", STAGE_COLUMNS, report.stage1_history)
    if report.init_history:
        write_rows(out / "history_init.csv", STAGE_COLUMNS, report.init_history)
    if report.T_hat is not None:
        save_transition(report.T_hat, out / "transition_init.txt")
        save_transition(report.T_revised, out / "transition_revised.txt")
        save_transition(report.delta_T, out / "delta_T.txt")
    if report.T_true is not None:
        save_transition(report.T_true, out / "transition_true.txt")
    if report.anchors is not None:
        report.anchors.to_csv(out / "anchors.csv")
    write_model(report.model, out / "model.bin")
    if config is not None:
        config.save(out / "config.json")
    (out / "summary.txt").write_text("".join(f"{k} = {v}\n" for k, v in summary_items(report)))
    return out


def read_summary(path) -> dict[str, str]:
    path = Path(path)
    out = {}
    for k, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise DataFormatError("expected 'key = value'", path=path, line=k)
        out[key] = value
    return out


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else None) for k, v in r.items()} for r in rows]


# -- aggregation -------------------------------------------------------------


@dataclass
class RunRecord:
    path: Path
    method: str
    seed: int
    fingerprint: str
    test_accuracy: float
    history: list[dict]


def find_runs(paths) -> list[Path]:
    """Run directories among ``paths``; a directory without a summary is searched one level down."""
    found = []
    for p in map(Path, paths):
        if (p / "summary.txt").is_file():
            found.append(p)
        elif p.is_dir():
            found += sorted(q for q in p.iterdir() if (q / "summary.txt").is_file())
    return found


def load_runs(paths) -> list[RunRecord]:
    dirs = find_runs(paths)
    missing = [str(p) for p in map(Path, paths) if not p.exists()]
    if missing:
        raise AggregationError("run directories do not exist", missing)
    if not dirs:
        raise AggregationError("no run directories found", [str(p) for p in paths])
    runs, broken = [], []
    for d in dirs:
        try:
            s = read_summary(d / "summary.txt")
            acc = s.get("test_accuracy", "")
            runs.append(RunRecord(d, s["method"], int(s["seed"]), s.get("fingerprint", ""),
                                  float(acc) if acc else float("nan"), read_history(d / "history.csv")))
        except (OSError, KeyError, ValueError, DataFormatError):
            broken.append(str(d))
    if broken:
        raise AggregationError("unreadable run directories", broken)
    return runs


def check_compatible(runs: list[RunRecord]) -> None:
    """All runs must share one data fingerprint, and no (method, seed) may repeat."""
    prints = {}
    for r in runs:
        prints.setdefault(r.fingerprint, []).append(r)
    if len(prints) > 1:
        majority = max(prints.values(), key=len)[0].fingerprint
        raise AggregationError(
            "runs use different data or noise settings",
            [f"{r.path} (fingerprint {r.fingerprint})" for r in runs if r.fingerprint != majority],
        )
    seen = {}
    dups = []
    for r in runs:
        key = (r.method, r.seed)
        if key in seen:
            dups.append(f"{r.path} duplicates {seen[key]}")
        seen[key] = r.path
    if dups:
        raise AggregationError("duplicate method/seed pairs", dups)


def mean_std(values) -> str:
    """Percentages as ``mm.dd±ss.dd``; the std is the population std (0 for one run)."""
    a = 100.0 * np.asarray(values, dtype=np.float64)
    return f"{a.mean():.2f}±{a.std():.2f}"


def comparison_rows(runs: list[RunRecord]) -> list[dict]:
    by_method = {}
    for r in sorted(runs, key=lambda r: (r.method, r.seed)):
        by_method.setdefault(r.method, []).append(r)
    rows = []
    for method, rs in by_method.items():
        acc = [r.test_accuracy for r in rs]
        rows.append({"method": method, "runs": len(rs), "seeds": " ".join(str(r.seed) for r in rs),
                     "test_accuracy": mean_std(acc)})
    return rows


def curve_rows(runs: list[RunRecord]) -> list[dict]:
    """Long-format estimation error: one row per (method, seed, epoch)."""
    rows = []
    for r in sorted(runs, key=lambda r: (r.method, r.seed)):
        for h in r.history:
            if h.get("estimation_error") is None:
                continue
            rows.append({"method": r.method, "seed": r.seed, "epoch": int(h["epoch"]),
                         "estimation_error": h["estimation_error"]})
    return rows


def write_report(paths, out_dir) -> tuple[Path, Path, list[RunRecord]]:
    runs = load_runs(paths)
    check_compatible(runs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "comparison.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "runs", "seeds", "test_accuracy"])
        for row in comparison_rows(runs):
            w.writerow([row["method"], row["runs"], row["seeds"], row["test_accuracy"]])
    curves = out / "estimation_error_curves.csv"
    write_rows(curves, ("method", "seed", "epoch", "estimation_error"), curve_rows(runs))
    return table, curves, runs
