"""Scoring against reference grids: relative L2 error, per-time snapshot
tables, and the append-only results ledger."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .network import Network
from .reference import ReferenceGrid

log = logging.getLogger(__name__)


def relative_l2(pred, ref) -> float:
    """sqrt(sum (pred-ref)^2) / sqrt(sum ref^2) over all points pooled.
    Undefined (nan) for an identically-zero reference."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError("prediction/reference shape mismatch")
    denom = math.sqrt(float(np.sum(ref * ref)))
    if denom == 0.0:
        log.warning("zero-norm reference; relative error undefined")
        return math.nan
    return math.sqrt(float(np.sum((pred - ref) ** 2))) / denom


def predict_on_grid(net: Network, grid: ReferenceGrid) -> np.ndarray:
    """Evaluate the network on every grid node; returns (channels, nt, nx)."""
    if net.spec.output_dim != grid.channels:
        raise ValueError(f"checkpoint has {net.spec.output_dim} channels, "
                         f"grid has {grid.channels}")
    tt, xx = np.meshgrid(grid.times, grid.xs, indexing="ij")
    out = net.forward(tt.ravel(), xx.ravel())
    return out.T.reshape(grid.channels, len(grid.times), len(grid.xs))


@dataclass
class Snapshot:
    requested_time: float
    slice_index: int
    time: float
    xs: np.ndarray
    ref: np.ndarray    # (channels, nx)
    pred: np.ndarray
    abs_diff: np.ndarray


def snapshot_compare(pred: np.ndarray, grid: ReferenceGrid,
                     times) -> list[Snapshot]:
    """Per-time comparison tables at the nearest mesh slices."""
    snaps = []
    for t_req in times:
        if not grid.times[0] <= t_req <= grid.times[-1]:
            raise ValueError(f"snapshot time {t_req} outside the grid")
        idx = int(np.argmin(np.abs(grid.times - t_req)))
        t_actual = float(grid.times[idx])
        if not math.isclose(t_actual, t_req, rel_tol=0, abs_tol=1e-12):
            log.warning("snapshot time %g matched to nearest slice %d (t=%g)",
                        t_req, idx, t_actual)
        snaps.append(Snapshot(
            requested_time=float(t_req), slice_index=idx, time=t_actual,
            xs=grid.xs, ref=grid.values[:, idx, :], pred=pred[:, idx, :],
            abs_diff=np.abs(pred[:, idx, :] - grid.values[:, idx, :])))
    return snaps


@dataclass
class EvalReport:
    rel_l2: float
    rel_l2_per_channel: list
    snapshots: list = field(default_factory=list)
    abs_diff: np.ndarray | None = None

    @property
    def max_abs_diff(self) -> float:
        return float(self.abs_diff.max()) if self.abs_diff is not None else math.nan


def evaluate_prediction(pred: np.ndarray, grid: ReferenceGrid,
                        snapshot_times=()) -> EvalReport:
    """Aggregate relative L2 pools every channel's points into one sum."""
    per_channel = [relative_l2(pred[c], grid.values[c])
                   for c in range(grid.channels)]
    report = EvalReport(
        rel_l2=relative_l2(pred, grid.values),
        rel_l2_per_channel=per_channel,
        abs_diff=np.abs(pred - grid.values))
    if snapshot_times:
        report.snapshots = snapshot_compare(pred, grid, snapshot_times)
    return report


# -- report files -----------------------------------------------------------------

def write_report(report: EvalReport, out_dir, stem: str = "eval") -> list[str]:
    """Summary CSV plus one snapshot CSV per requested time; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    summary = os.path.join(out_dir, f"{stem}_summary.csv")
    with open(summary, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        w.writerow(["rel_l2", repr(report.rel_l2)])
        for c, v in enumerate(report.rel_l2_per_channel):
            w.writerow([f"rel_l2_channel{c}", repr(v)])
        w.writerow(["max_abs_diff", repr(report.max_abs_diff)])
    paths.append(summary)
    for snap in report.snapshots:
        p = os.path.join(out_dir, f"{stem}_snapshot_t{snap.time:g}.csv")
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            cols = ["x"]
            for c in range(snap.ref.shape[0]):
                cols += [f"ref_c{c}", f"pred_c{c}", f"abs_diff_c{c}"]
            w.writerow(cols)
            for n in range(snap.xs.size):
                row = [repr(float(snap.xs[n]))]
                for c in range(snap.ref.shape[0]):
                    row += [repr(float(snap.ref[c, n])),
                            repr(float(snap.pred[c, n])),
                            repr(float(snap.abs_diff[c, n]))]
                w.writerow(row)
        paths.append(p)
    return paths


LEDGER_FIELDS = ("problem", "scheme", "algorithm", "epochs", "seed",
                 "rel_l2", "checkpoint", "elapsed_s", "recorded_at")


def append_ledger(path, **fields) -> str:
    """Append one self-describing key=value line; returns the line."""
    parts = []
    for key in LEDGER_FIELDS:
        if key in fields:
            parts.append(f"{key}={fields.pop(key)}")
    parts.extend(f"{k}={v}" for k, v in sorted(fields.items()))
    line = " ".join(str(p) for p in parts)
    with open(path, "a") as f:
        f.write(line + "\n")
    return line


def ledger_timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")
