"""Figure rendering for CLI report directories.

Every report path that writes delimited output also renders a PNG next to
it.  All figures go through one save helper with fixed metadata so
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METADATA = {"Software": "chromfit"}
_DPI = 110


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)


def save_chromatograms(path, chromatograms, labels=None) -> None:
    """Overlaid elution profiles on one time axis."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for k, chrom in enumerate(chromatograms):
        label = labels[k] if labels else None
        ax.plot(chrom.time_grid, chrom.response, lw=1.2, label=label)
    ax.set_xlabel("time")
    ax.set_ylabel("detector response")
    if labels:
        ax.legend(fontsize=8)
    _save(fig, path)


def save_history(path, history) -> None:
    """Training curves: objective and data term, then train and validation R^2."""
    epochs = [row.epoch for row in history]
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7.0, 5.6), sharex=True)
    top.plot(epochs, [row.loss for row in history], lw=1.2, label="loss")
    top.plot(epochs, [row.data_term for row in history], lw=1.2,
             label="data term")
    top.set_yscale("log")
    top.set_ylabel("objective")
    top.legend(fontsize=8)
    bottom.plot(epochs, [row.train_r2 for row in history], lw=1.2,
                label="train")
    bottom.plot(epochs, [row.val_r2 for row in history], lw=1.2,
                label="validation")
    bottom.set_xlabel("epoch")
    bottom.set_ylabel("R$^2$")
    bottom.legend(fontsize=8)
    _save(fig, path)


def save_entry_r2(path, names, scores, overall=None) -> None:
    """Bar chart of per-entry R^2 with an optional overall reference line."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    positions = np.arange(len(names))
    ax.bar(positions, scores, width=0.7)
    if overall is not None:
        ax.axhline(overall, color="crimson", lw=1.0, ls="--",
                   label=f"overall {overall:.3f}")
        ax.legend(fontsize=8)
    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("R$^2$")
    _save(fig, path)


def save_fit_overlay(path, grid, observed, fitted, labels=None) -> None:
    """Observed vs fitted responses, one panel per observation."""
    n = len(observed)
    fig, axes = plt.subplots(n, 1, figsize=(7.0, 2.8 * n), sharex=True,
                             squeeze=False)
    for k in range(n):
        ax = axes[k][0]
        ax.plot(grid, observed[k], lw=1.2, label="observed")
        ax.plot(grid, fitted[k], lw=1.0, ls="--", label="fitted")
        title = labels[k] if labels else f"observation {k + 1}"
        ax.set_title(title, fontsize=9)
        ax.set_ylabel("response")
        ax.legend(fontsize=8)
    axes[-1][0].set_xlabel("time")
    _save(fig, path)


def save_trace(path, trace) -> None:
    """Best-so-far objective value against evaluation count."""
    trace = np.asarray(trace, dtype=float)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.plot(np.arange(1, trace.size + 1), trace, lw=1.2)
    if np.all(trace > 0):
        ax.set_yscale("log")
    ax.set_xlabel("objective evaluation")
    ax.set_ylabel("best objective")
    _save(fig, path)


def save_cv(path, report) -> None:
    """Per-fold validation R^2 bars with the average marked."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    folds = np.arange(1, report.k + 1)
    ax.bar(folds - 0.18, report.train_r2, width=0.36, label="train")
    ax.bar(folds + 0.18, report.val_r2, width=0.36, label="validation")
    ax.axhline(report.average_r2, color="crimson", lw=1.0, ls="--",
               label=f"average {report.average_r2:.3f}")
    ax.set_xticks(folds)
    ax.set_xlabel("fold")
    ax.set_ylabel("R$^2$")
    ax.legend(fontsize=8)
    _save(fig, path)
