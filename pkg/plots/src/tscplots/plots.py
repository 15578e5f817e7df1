"""Figure builders for training-curve and evaluation-table CSVs."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

CURVE_X = "episode"
CURVE_Y = "mean_cum_reward"
EVAL_KEY = "algorithm"
EVAL_METRICS = ("travel_time_s", "queue_length", "throughput")
EVAL_LABELS = ("Travel time (s)", "Queue length (veh)", "Throughput (veh)")


class MissingColumnError(ValueError):
    """A required CSV column is absent; carries the column name."""

    def __init__(self, path, column):
        self.column = column
        super().__init__(f"{path}: missing required column {column!r}")


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return reader.fieldnames, rows


def _require(path, fieldnames, columns):
    for col in columns:
        if col not in fieldnames:
            raise MissingColumnError(path, col)


def rolling_mean(values, window):
    if window <= 1:
        return np.asarray(values, dtype=float)
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i - window + 1)
        out[i] = v[lo:i + 1].mean()
    return out


def plot_training_curves(csv_paths, labels, out_path, smooth_window=1):
    """One reward-vs-episode line per input CSV; returns the output path."""
    if labels is None:
        labels = [str(p) for p in csv_paths]
    if len(labels) != len(csv_paths):
        raise ValueError(f"{len(csv_paths)} csv paths but {len(labels)} labels")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path, label in zip(csv_paths, labels):
        fieldnames, rows = _read_csv(path)
        _require(path, fieldnames, (CURVE_X, CURVE_Y))
        x = [float(r[CURVE_X]) for r in rows]
        y = rolling_mean([float(r[CURVE_Y]) for r in rows], smooth_window)
        ax.plot(x, y, label=label, linewidth=1.2)
    ax.set_xlabel("episode")
    ylabel = "mean cumulative reward"
    if smooth_window > 1:
        ylabel += f" (rolling mean, window {smooth_window})"
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_eval_table(csv_path, out_path):
    """Grouped bars (one group per algorithm, one panel per metric)."""
    fieldnames, rows = _read_csv(csv_path)
    _require(csv_path, fieldnames, (EVAL_KEY, *EVAL_METRICS))
    algorithms = [r[EVAL_KEY] for r in rows]
    fig, axes = plt.subplots(1, len(EVAL_METRICS), figsize=(11, 3.8))
    xs = np.arange(len(algorithms))
    for ax, metric, label in zip(axes, EVAL_METRICS, EVAL_LABELS):
        vals = [float(r[metric]) for r in rows]
        ax.bar(xs, vals, width=0.6, color="tab:blue")
        ax.set_xticks(xs)
        ax.set_xticklabels(algorithms, rotation=30, ha="right", fontsize=8)
        ax.set_title(label, fontsize=10)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
