"""Matplotlib rendering of evaluation reports: solution heatmap panels and
per-time snapshot overlays, written next to the delimited output."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport
from .reference import ReferenceGrid

CHANNEL_NAMES = {1: ("u",), 2: ("E", "H")}


def _extent(grid: ReferenceGrid):
    return [grid.xs[0], grid.xs[-1], grid.times[0], grid.times[-1]]


def solution_panels(pred: np.ndarray, grid: ReferenceGrid, path) -> str:
    """Reference / prediction / absolute difference heatmaps per channel."""
    names = CHANNEL_NAMES.get(grid.channels,
                              tuple(f"u{c}" for c in range(grid.channels)))
    rows = grid.channels
    fig, axes = plt.subplots(rows, 3, figsize=(12, 3.2 * rows), squeeze=False)
    ext = _extent(grid)
    for c in range(rows):
        ref = grid.values[c]
        panels = [(ref, f"reference {names[c]}"),
                  (pred[c], f"predicted {names[c]}"),
                  (np.abs(pred[c] - ref), "absolute difference")]
        vmin, vmax = ref.min(), ref.max()
        for j, (data, title) in enumerate(panels):
            ax = axes[c][j]
            kw = {} if j == 2 else {"vmin": vmin, "vmax": vmax}
            im = ax.imshow(data, origin="lower", aspect="auto", extent=ext,
                           cmap="viridis" if j < 2 else "magma", **kw)
            ax.set_title(title, fontsize=10)
            ax.set_xlabel("x")
            ax.set_ylabel("t")
            fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def snapshot_panels(report: EvalReport, path) -> str | None:
    """Predicted (dashed) vs reference (solid) profiles at the report's
    snapshot times, one column per time, one row per channel."""
    snaps = report.snapshots
    if not snaps:
        return None
    channels = snaps[0].ref.shape[0]
    names = CHANNEL_NAMES.get(channels, tuple(f"u{c}" for c in range(channels)))
    fig, axes = plt.subplots(channels, len(snaps),
                             figsize=(3.6 * len(snaps), 2.8 * channels),
                             squeeze=False)
    for c in range(channels):
        for j, snap in enumerate(snaps):
            ax = axes[c][j]
            ax.plot(snap.xs, snap.ref[c], "b-", lw=1.4, label="reference")
            ax.plot(snap.xs, snap.pred[c], "r--", lw=1.2, label="predicted")
            ax.set_title(f"{names[c]} at t = {snap.time:g}", fontsize=10)
            ax.set_xlabel("x")
            if j == 0:
                ax.set_ylabel(names[c])
            if c == 0 and j == 0:
                ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def loss_history_figure(history_rows, path) -> str | None:
    """Training objective and weight floor over epochs."""
    if not history_rows:
        return None
    epochs = [r["epoch"] for r in history_rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [r["total_loss"] for r in history_rows], "k-", lw=1.2)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("objective")
    ax1.set_title("training objective", fontsize=10)
    ax2.semilogy(epochs, [max(r["min_weight"], 1e-300) for r in history_rows],
                 "C0-", lw=1.0, label="min weight")
    ax2.semilogy(epochs, [r["epsilon"] for r in history_rows],
                 "C1-", lw=1.0, label="causality parameter")
    ax2.set_xlabel("epoch")
    ax2.legend(fontsize=8)
    ax2.set_title("causal weighting state", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return str(path)


def render_evaluation(pred: np.ndarray, grid: ReferenceGrid,
                      report: EvalReport, out_dir, stem: str = "eval") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = [solution_panels(pred, grid, os.path.join(out_dir, f"{stem}_solution.png"))]
    snap = snapshot_panels(report, os.path.join(out_dir, f"{stem}_snapshots.png"))
    if snap:
        paths.append(snap)
    return paths
