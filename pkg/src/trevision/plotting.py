"""Optional figures for ``report --figures``; CSV output never depends on this."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_estimation_curves(curve_rows, path) -> Path:
    """Estimation error against epoch, one line per (method, seed)."""
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    series = {}
    for r in curve_rows:
        series.setdefault((r["method"], r["seed"]), []).append((r["epoch"], r["estimation_error"]))
    colors = {}
    for (method, seed), pts in sorted(series.items()):
        pts.sort()
        color = colors.setdefault(method, f"C{len(colors)}")
        ax.plot([p[0] for p in pts], [p[1] for p in pts], color=color, lw=1.0, alpha=0.8,
                label=method if seed == min(s for m, s in series if m == method) else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("estimation error")
    if series:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_accuracy(runs, path) -> Path:
    """Per-method clean test accuracy, one dot per seed."""
    methods = sorted({r.method for r in runs})
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    for k, m in enumerate(methods):
        acc = [100 * r.test_accuracy for r in runs if r.method == m]
        ax.scatter([k] * len(acc), acc, s=14, color=f"C{k}")
    ax.set_xticks(range(len(methods)), methods, rotation=20)
    ax.set_ylabel("clean test accuracy (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
