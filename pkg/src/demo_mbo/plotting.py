"""Report figures. Rendered headless to files next to the CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def new_figure(width=4.5, height=None):
    plt.rcParams.update(STYLE)
    fig, ax = plt.subplots(figsize=(width, height or width * GOLDEN))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_methods(report: dict, metric: str, path, d_best: float | None = 1.0) -> Path:
    """Bar chart of per-method mean +- stderr for one metric."""
    methods = list(report["methods"])
    means = [report["methods"][m][metric]["mean"] for m in methods]
    errs = [report["methods"][m][metric]["stderr"] for m in methods]
    fig, ax = new_figure()
    ax.bar(range(len(methods)), means, yerr=errs, capsize=3, color="0.6", edgecolor="k", lw=0.6)
    if d_best is not None and metric != "proportion":
        ax.axhline(d_best, ls="--", lw=0.8, color="C3", label="D(best)")
        ax.legend(frameon=False)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_ylabel({"max": "100th pct. normalised score", "median": "50th pct. normalised score",
                   "proportion": "fraction above D(best)"}[metric])
    lo = min(m - e for m, e in zip(means, errs))
    if metric != "proportion":
        ax.set_ylim(max(0.0, lo - 0.1), None)
    return save(fig, path)


def plot_sweep(rows, path, band=(200, 600)) -> Path:
    m = np.array([r.m for r in rows])
    mean = np.array([r.mean for r in rows])
    se = np.array([r.stderr for r in rows])
    fig, ax = new_figure()
    if band is not None:
        ax.axvspan(*band, color="0.92", zorder=0)
    ax.errorbar(m, mean, yerr=se, marker="o", ms=3, lw=1, capsize=2, color="k")
    ax.axhline(1.0, ls="--", lw=0.8, color="C3")
    ax.set_xlabel("noise time m")
    ax.set_ylabel("100th pct. normalised score")
    return save(fig, path)


def plot_scores(scores, path, d_best: float = 1.0) -> Path:
    fig, ax = new_figure()
    ax.hist(np.asarray(scores), bins=30, color="0.6", edgecolor="k", lw=0.4)
    ax.axvline(d_best, ls="--", lw=0.8, color="C3")
    ax.set_xlabel("normalised oracle score")
    ax.set_ylabel("candidates")
    return save(fig, path)
