"""Matplotlib figures written to files (Agg backend, no display needed)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METADATA = {"Software": None}  # keep PNG bytes free of version strings


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=METADATA)
    plt.close(fig)
    return path


def array_figure(array, path, title: str = "", mask=None, cmap: str = "viridis") -> Path:
    """Image of a 2-D array with a colour bar; pixels outside ``mask`` are blank."""
    data = np.asarray(array, dtype=np.float64)
    if mask is not None:
        data = np.where(np.asarray(mask, dtype=bool), data, np.nan)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(data, cmap=cmap, interpolation="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def histogram(values, bins: int = 30, range_=None):
    """Counts and edges, shared by the CSV export and the figure."""
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1)
    return np.histogram(values, bins=bins, range=range_)


def write_histogram_csv(values, path, bins: int = 30, range_=None) -> Path:
    counts, edges = histogram(values, bins, range_)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return path


def histogram_figure(values, path, xlabel: str, title: str = "", bins: int = 30) -> Path:
    counts, edges = histogram(values, bins)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black", linewidth=0.4)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def training_log_figure(rows, path) -> Path:
    """Loss terms and held-out order accuracy against the global epoch index."""
    xs, loss, l1, l2, acc = [], [], [], [], []
    offset = 0
    last_stage = None
    for row in rows:
        stage = int(row["stage"])
        if stage != last_stage and last_stage is not None:
            offset = xs[-1]
        last_stage = stage
        xs.append(offset + int(row["epoch"]))
        loss.append(float(row["loss"]))
        l1.append(float(row["loss1"]))
        l2.append(float(row["loss2"]))
        a = row.get("order_accuracy_on_val", "")
        acc.append(float(a) if a not in ("", None) else np.nan)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5.5, 5), sharex=True)
    ax1.semilogy(xs, loss, label="loss")
    ax1.semilogy(xs, l1, label="loss1", linestyle="--")
    ax1.semilogy(xs, l2, label="loss2", linestyle=":")
    ax1.legend()
    ax1.set_ylabel("loss")
    ax2.plot(xs, acc, marker=".")
    ax2.set_ylabel("held-out order accuracy")
    ax2.set_xlabel("epoch (stages concatenated)")
    fig.tight_layout()
    return _save(fig, path)


def ablation_figure(rows, path) -> Path:
    ids = [r["ID"] for r in rows]
    rmse = [max(float(r["depth_rmse"]), 1e-12) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(ids, rmse, edgecolor="black", linewidth=0.4)
    ax.set_yscale("log")
    ax.set_ylabel("depth RMSE (mm)")
    ax.set_title("ablation")
    fig.tight_layout()
    return _save(fig, path)
