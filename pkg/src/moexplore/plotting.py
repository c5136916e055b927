"""Plot-ready CSV and SVG learning-curve charts."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import METRICS, AggregateCurve  # noqa: E402

PLOT_FIELDS = ("algorithm", "iteration", "metric", "mean", "ci_low", "ci_high", "half_width", "num_runs")
LABELS = {"pg_mse": "PG for MSE", "pg_moe": "PG for MOE", "pg_regmoe": "PG for Reg-MOE"}
COLORS = {"pg_mse": "#1b9e77", "pg_moe": "#d95f02", "pg_regmoe": "#7570b3"}
YLABELS = {"state_entropy": "H(S | pi)  [nats]", "observation_entropy": "H(X | pi)  [nats]"}

# fixed ids and no timestamp, so identical data gives an identical file
_RC = {"svg.hashsalt": "moexplore", "svg.fonttype": "none", "font.size": 11,
       "axes.spines.top": False, "axes.spines.right": False}


def write_plot_csv(curves: Mapping[str, AggregateCurve], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_FIELDS)
        for alg, c in curves.items():
            for metric in METRICS:
                lo, hi = c.ci(metric)
                for k, it in enumerate(c.iterations):
                    w.writerow([alg, int(it), metric, repr(float(c.mean[metric][k])), repr(float(lo[k])),
                                repr(float(hi[k])), repr(float(c.half_width[metric][k])), c.num_runs])


def read_plot_csv(path) -> dict[str, AggregateCurve]:
    rows: dict[str, dict[str, list]] = {}
    runs: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            alg = row["algorithm"]
            rows.setdefault(alg, {}).setdefault(row["metric"], []).append(
                (int(row["iteration"]), float(row["mean"]), float(row["half_width"])))
            runs[alg] = int(row["num_runs"])
    curves = {}
    for alg, by_metric in rows.items():
        iterations = None
        mean, half = {}, {}
        for metric, pts in by_metric.items():
            it = np.array([p[0] for p in pts])
            if iterations is not None and not np.array_equal(it, iterations):
                raise ValueError(f"{alg}: metrics disagree on iterations")
            iterations = it
            mean[metric] = np.array([p[1] for p in pts])
            half[metric] = np.array([p[2] for p in pts])
        curves[alg] = AggregateCurve(alg, iterations, mean, half, runs[alg])
    return curves


def pretty_axes(width: float = 6.0, height: float | None = None):
    golden = (math.sqrt(5) - 1) / 2
    fig, ax = plt.subplots(figsize=(width, height or width * golden))
    ax.grid(True, alpha=0.3, linewidth=0.6)
    return fig, ax


def plot_metric(curves: Mapping[str, AggregateCurve], metric: str, path, title: str | None = None) -> None:
    with plt.rc_context(_RC):
        fig, ax = pretty_axes()
        for alg, c in curves.items():
            lo, hi = c.ci(metric)
            color = COLORS.get(alg)
            ax.plot(c.iterations, c.mean[metric], label=LABELS.get(alg, alg), color=color, linewidth=1.6)
            ax.fill_between(c.iterations, lo, hi, color=color, alpha=0.2, linewidth=0)
        ax.set_xlabel("iteration")
        ax.set_ylabel(YLABELS.get(metric, metric))
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def emit_plot_data(curves: Mapping[str, AggregateCurve], output, title: str | None = None) -> list[Path]:
    """Write ``curves.csv`` plus ``<metric>.svg`` for each metric into ``output``."""
    if not curves:
        raise ValueError("no curves to emit")
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "curves.csv"]
    write_plot_csv(curves, written[0])
    metrics = [m for m in METRICS if all(m in c.mean for c in curves.values())]
    for metric in metrics:
        path = out / f"{metric}.svg"
        plot_metric(curves, metric, path, title)
        written.append(path)
    return written
