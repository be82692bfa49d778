"""Analysis helpers: training-stability statistics and hyperparameter sweep curves.

Plots are optional byproducts; the numbers always land in plain data files
that round-trip losslessly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cohscore.trainer import TrainLog

logger = logging.getLogger(__name__)


@dataclass
class StabilityStats:
    label: str
    mean: float
    std: float
    evals: int

    def to_json(self) -> dict:
        return {"label": self.label, "mean": self.mean, "std": self.std, "evals": self.evals}


def stability_stats(logs: Sequence[TrainLog], warmup_steps: int) -> dict[str, StabilityStats]:
    """Mean and std of post-warm-up dev accuracy, grouped by run label.

    Runs of the same label (e.g. seeds of one regime) pool their post-warm-up
    evaluations. Any run with fewer than 3 post-warm-up evaluations is an
    error: a stability claim needs a series, not a point.
    """
    if not logs:
        raise ValueError("no training logs")
    grouped: dict[str, list[float]] = {}
    for log in logs:
        series = [e.accuracy for e in log.evals if e.step > warmup_steps]
        if len(series) < 3:
            raise ValueError(
                f"run {log.label!r} has {len(series)} post-warm-up evaluations; need >= 3"
            )
        grouped.setdefault(log.label, []).extend(series)
    return {
        label: StabilityStats(
            label=label,
            mean=float(np.mean(values)),
            std=float(np.std(values)),
            evals=len(values),
        )
        for label, values in grouped.items()
    }


@dataclass
class CurveSeries:
    """One metric-vs-hyperparameter curve with a +/- band."""

    label: str
    parameter: str
    x: list[float] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    band: list[float] = field(default_factory=list)


def sweep_curves(
    rows: Sequence[dict],
    parameter: str,
    out_dir: str | Path,
    stem: str = "sweep",
) -> list[CurveSeries]:
    """Aggregate sweep rows into per-dataset curves; writes CSV and (if the
    grid has >= 2 points) a PNG.

    Rows need keys: parameter, value, dataset, mean, std. Rows for other
    parameters are ignored.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    relevant = [r for r in rows if r["parameter"] == parameter]
    if not relevant:
        raise ValueError(f"no sweep rows for parameter {parameter!r}")
    series: dict[str, CurveSeries] = {}
    for row in sorted(relevant, key=lambda r: (str(r["dataset"]), float(r["value"]))):
        curve = series.setdefault(
            str(row["dataset"]),
            CurveSeries(label=str(row["dataset"]), parameter=parameter),
        )
        curve.x.append(float(row["value"]))
        curve.y.append(float(row["mean"]))
        curve.band.append(float(row["std"]))
    curves = list(series.values())

    csv_path = out_dir / f"{stem}_{parameter}.csv"
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["dataset", "parameter", "value", "mean", "std"])
        for curve in curves:
            for x, y, band in zip(curve.x, curve.y, curve.band):
                writer.writerow([curve.label, parameter, repr(x), repr(y), repr(band)])

    if any(len(curve.x) >= 2 for curve in curves):
        _plot_curves(curves, parameter, out_dir / f"{stem}_{parameter}.png")
    else:
        logger.info("single grid point for %s; data file only", parameter)
    return curves


def load_curves_csv(path: str | Path) -> list[CurveSeries]:
    """Inverse of the sweep CSV: identical curves back from disk."""
    series: dict[str, CurveSeries] = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            curve = series.setdefault(
                row["dataset"], CurveSeries(label=row["dataset"], parameter=row["parameter"])
            )
            curve.x.append(float(row["value"]))
            curve.y.append(float(row["mean"]))
            curve.band.append(float(row["std"]))
    return list(series.values())


def _plot_curves(curves: list[CurveSeries], parameter: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        x = np.asarray(curve.x)
        y = np.asarray(curve.y)
        band = np.asarray(curve.band)
        ax.plot(x, y, marker="o", label=curve.label)
        ax.fill_between(x, y - band, y + band, alpha=0.2)
    ax.set_xlabel(parameter)
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_dev_accuracy(logs: Sequence[TrainLog], path: str | Path) -> None:
    """Dev-accuracy-vs-step traces for a set of runs (stability picture)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for index, log in enumerate(logs):
        steps = [e.step for e in log.evals]
        accuracy = [e.accuracy for e in log.evals]
        ax.plot(steps, accuracy, label=f"{log.label}[{index}]", alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("dev accuracy")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
