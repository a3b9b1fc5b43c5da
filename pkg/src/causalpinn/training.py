"""Optimizer, learning-rate schedules, and the causal training loops.

Algorithm 1 weights time slices by the chosen causal scheme; algorithm 2
additionally weights spatial nodes from both boundaries inward and gates the
causality-parameter sharpening on all three weight families. Training is
full-batch on the fixed mesh; the mesh is evaluated in contiguous slice
chunks so per-chunk graphs stay cache-resident, and gradients accumulate in
fixed chunk order (bit-reproducible regardless of worker settings).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as ls
from .network import Network, Workspace, init_xavier, input_jet_streams, save_checkpoint
from .problems import DomainBox, gcol
from .weights import WeightState

log = logging.getLogger(__name__)

CHUNK_TARGET_POINTS = 1664  # slices per chunk chosen so a chunk stays cache-sized
DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Raised when the training loss explodes past the divergence guard."""


# -- optimizer -----------------------------------------------------------------

class Adam:
    """Bias-corrected first-order moment optimizer over a flat parameter
    vector. Updates are functional (a new array is returned)."""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        if params.shape != grad.shape or params.shape != self.m.shape:
            raise ValueError("parameter/gradient/moment length mismatch")
        if not np.all(np.isfinite(grad)):
            raise ad.NonFiniteError("non-finite gradient in optimizer step")
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- learning-rate schedules ------------------------------------------------------

@dataclass(frozen=True)
class SchedulerSpec:
    """Exponential decay hits eta_min exactly at epoch n_epochs; step decay
    multiplies by gamma every step_every epochs; cosine sweeps from eta_start
    to eta_min over n_epochs."""

    kind: str
    eta_start: float
    n_epochs: int
    eta_min: float | None = None
    gamma: float | None = None
    step_every: int | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "step", "cosine", "constant"):
            raise ValueError(f"unknown scheduler {self.kind!r}")
        if self.eta_start <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind == "exponential" and not self.eta_min:
            raise ValueError("exponential decay needs eta_min")
        if self.kind == "step" and (self.gamma is None or not self.step_every):
            raise ValueError("step decay needs gamma and step_every")
        if self.kind == "cosine" and self.eta_min is None:
            raise ValueError("cosine decay needs eta_min")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ValueError("decay rate must be in (0, 1]")
        if self.eta_min is not None and self.eta_min > self.eta_start:
            raise ValueError("eta_min exceeds the initial rate")


def lr_at(spec: SchedulerSpec, epoch: int) -> float:
    if spec.kind == "constant":
        return spec.eta_start
    if spec.kind == "exponential":
        gamma = (spec.eta_min / spec.eta_start) ** (1.0 / spec.n_epochs)
        return spec.eta_start * gamma ** epoch
    if spec.kind == "step":
        return spec.eta_start * spec.gamma ** (epoch // spec.step_every)
    half = (1.0 + math.cos(math.pi * epoch / spec.n_epochs)) / 2.0
    return spec.eta_min + (spec.eta_start - spec.eta_min) * half


# -- run configuration ---------------------------------------------------------

@dataclass(frozen=True)
class StageSpec:
    epochs: int
    scheduler: SchedulerSpec
    eps_init: float


@dataclass
class TrainRun:
    """Everything needed to reproduce a training run bit-for-bit."""

    problem: object
    box: DomainBox
    network: Network
    loss_cfg: ls.LossConfig
    scheme: str
    stages: tuple[StageSpec, ...]
    algorithm: int = 1
    delta_w: float = 0.99
    m_eps: float = 2.0
    seed: int = 0
    log_every: int = 100
    weight_log_every: int = 0
    divergence_factor: float = DIVERGENCE_FACTOR

    def __post_init__(self):
        if self.algorithm not in (1, 2):
            raise ValueError("algorithm must be 1 or 2")
        if self.algorithm == 2 and not self.problem.periodic:
            raise ValueError("the spatio-temporal algorithm needs a periodic problem")
        if self.loss_cfg.mode == "mae" and self.scheme != "unweighted":
            raise ValueError("the absolute-error mode has no slice weighting")
        if not self.stages:
            raise ValueError("at least one training stage is required")

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.stages)


@dataclass
class TrainResult:
    network: Network
    history: list
    weight_history: list
    final_loss: float
    best_loss: float
    best_params: np.ndarray
    epochs_run: int
    wall_seconds: float
    diverged: bool = False


HISTORY_COLUMNS = ("epoch", "total_loss", "slice_loss_min", "slice_loss_max",
                   "epsilon", "min_weight")


# -- mesh plan -------------------------------------------------------------------

class _MeshPlan:
    """Precomputed chunk layout, input streams and workspaces for one run."""

    def __init__(self, run: TrainRun):
        problem, box, spec = run.problem, run.box, run.network.spec
        self.times = box.times()
        xs = box.xs()
        self.xs_resid = xs[1:] if problem.singular_axis else xs
        m = self.xs_resid.size
        n_rows = self.times.size
        rows_per_chunk = max(1, CHUNK_TARGET_POINTS // m)
        self.chunks = [(i, min(i + rows_per_chunk, n_rows))
                       for i in range(0, n_rows, rows_per_chunk)]
        self.x_order = problem.x_order
        self.streams = []
        self.workspaces = []
        for i0, i1 in self.chunks:
            tt = np.repeat(self.times[i0:i1], m)
            xx = np.tile(self.xs_resid, i1 - i0)
            self.streams.append(input_jet_streams(spec, tt, xx,
                                                  x_order=self.x_order,
                                                  with_time=True))
            self.workspaces.append(Workspace())
        self.g0 = problem.initial(xs)
        self.ic_streams = None
        self.ic_workspace = None
        if problem.singular_axis:
            self.ic_streams = input_jet_streams(spec, np.zeros(xs.size), xs,
                                                x_order=0, with_time=False)
            self.ic_workspace = Workspace()


def _epoch_losses(run: TrainRun, plan: _MeshPlan, delta: float):
    """Forward sweep: per-chunk graphs with loss terms; returns the chunk
    records plus value-level slice and column statistics."""
    problem, box, cfg = run.problem, run.box, run.loss_cfg
    m = plan.xs_resid.size
    records = []
    col_sq = np.zeros(m)
    boundary_source = run.algorithm == 2 and problem.kind == "kdv"
    for ci, (i0, i1) in enumerate(plan.chunks):
        graph = ad.Graph()
        lifted = run.network.lift(graph)
        sample = lifted.forward_jets(x_order=plan.x_order,
                                     streams=plan.streams[ci],
                                     workspace=plan.workspaces[ci])
        ic_gap = ic_gap_resid = None
        if i0 == 0:
            if problem.singular_axis:
                s_ic = lifted.forward_jets(x_order=0, with_time=False,
                                           streams=plan.ic_streams,
                                           workspace=plan.ic_workspace)
                ic_gap = [gcol(s_ic.u, c) - plan.g0[c]
                          for c in range(problem.channels)]
                ic_gap_resid = [ls._slice_tail(g) for g in ic_gap]
            else:
                u0_rows = [ad.take_index(ad.reshape(gcol(sample.u, c), (i1 - i0, m)), 0, axis=0)
                           for c in range(problem.channels)]
                ic_gap = [u0 - plan.g0[c] for c, u0 in enumerate(u0_rows)]
                ic_gap_resid = ic_gap
        terms = ls.evaluate_chunk(problem, box, cfg, (i0, i1), sample,
                                  ic_gap=ic_gap, ic_gap_resid=ic_gap_resid,
                                  boundary_source=boundary_source, delta=delta)
        records.append((graph, terms))
        col_sq += terms.r2_values.sum(axis=0)
    col_means = col_sq / box.n_t  # time-mean residual square per x node
    return records, col_means


def _epoch_gradient(run: TrainRun, plan: _MeshPlan, records, state: WeightState):
    """Assemble weighted totals per chunk, backprop, accumulate in chunk
    order. Returns (gradient, raw total, slice losses)."""
    box, cfg = run.box, run.loss_cfg
    spatial_row = None
    if run.algorithm == 2:
        spatial_row = state.spatial_fwd + state.spatial_bwd

    slice_vecs = []
    for graph, terms in records:
        slice_vecs.append(ls.slice_loss_vector(terms, box, spatial_row))
    slice_vals = np.concatenate([v.value for v in slice_vecs])
    state.update_temporal(slice_vals)
    w = state.temporal

    grad = None
    total = 0.0
    for (graph, terms), vec in zip(records, slice_vecs):
        i0, i1 = terms.rows
        if cfg.mode == "mae":
            part = terms.abs_sum * (1.0 / (plan.times.size * plan.xs_resid.size))
            if terms.ic_abs is not None:
                part = part + terms.ic_abs * (1.0 / (box.t_final * (box.n_x + 1)))
        else:
            part = ad.vsum(vec * w[i0:i1]) * (1.0 / box.n_t)
            if cfg.mode == "vanilla":
                part = part * cfg.lambda_r
                if terms.ic_mse is not None:
                    part = part + cfg.lambda_ic * terms.ic_mse
                if terms.bc_mismatch is not None:
                    part = part + (cfg.lambda_bc / (box.n_t + 1)) * ad.vsum(terms.bc_mismatch)
        total += float(part.value)
        gv = ad.backward(part)
        grad = gv if grad is None else grad + gv

    if cfg.log_transform:
        floor = max(total, ls.LOG_FLOOR)
        if total < ls.LOG_FLOOR:
            log.warning("total loss %g clamped at the log floor", total)
        grad = grad / floor
        objective = math.log(floor)
    else:
        objective = total
    return grad, total, objective, slice_vals


def train(run: TrainRun, out_dir=None) -> TrainResult:
    """Run all stages of a training run; optionally write run artifacts
    (histories, checkpoints, manifest) under out_dir."""
    t_start = time.perf_counter()
    plan = _MeshPlan(run)
    net = run.network
    params = net.params_flat()
    adam = Adam(params.size)
    delta = ls.delta_scale(run.loss_cfg, run.problem, run.box)

    history: list[dict] = []
    weight_history: list[dict] = []
    best_loss = math.inf
    best_params = params.copy()
    initial_total = None
    epoch_global = 0
    diverged = False

    try:
        for stage in run.stages:
            state = WeightState(run.scheme, stage.eps_init, run.delta_w, run.m_eps)
            for epoch in range(stage.epochs):
                records, col_means = _epoch_losses(run, plan, delta)
                if run.algorithm == 2:
                    state.update_spatial(col_means)
                grad, total, objective, slice_vals = _epoch_gradient(
                    run, plan, records, state)
                state.anneal()
                records = None  # free chunk graphs before the update

                if initial_total is None:
                    initial_total = max(total, ls.LOG_FLOOR)
                if not math.isfinite(total) or total > run.divergence_factor * initial_total:
                    diverged = True
                    raise DivergenceError(
                        f"loss {total:.3e} exceeded {run.divergence_factor:.0e} x "
                        f"initial {initial_total:.3e} at epoch {epoch_global}")

                if total < best_loss:
                    best_loss = total
                    best_params = params.copy()
                if epoch_global % run.log_every == 0 or epoch == stage.epochs - 1:
                    history.append({
                        "epoch": epoch_global,
                        "total_loss": objective,
                        "slice_loss_min": float(slice_vals.min()),
                        "slice_loss_max": float(slice_vals.max()),
                        "epsilon": state.eps,
                        "min_weight": float(state.temporal.min()),
                    })
                if run.weight_log_every and epoch_global % run.weight_log_every == 0:
                    weight_history.append({"epoch": epoch_global, "epsilon": state.eps,
                                           "weights": state.temporal.copy()})

                lr = lr_at(stage.scheduler, epoch)
                params = adam.step(params, grad, lr)
                net.set_params_flat(params)
                epoch_global += 1
    except DivergenceError:
        if out_dir is not None:
            _dump_divergence(run, out_dir, epoch_global, history)
        raise

    final_loss = history[-1]["total_loss"] if history else math.nan
    result = TrainResult(network=net, history=history,
                         weight_history=weight_history,
                         final_loss=final_loss, best_loss=best_loss,
                         best_params=best_params, epochs_run=epoch_global,
                         wall_seconds=time.perf_counter() - t_start,
                         diverged=diverged)
    if out_dir is not None:
        write_artifacts(run, result, out_dir)
    return result


def train_algorithm1(run: TrainRun, out_dir=None) -> TrainResult:
    """Temporal causal weighting only."""
    if run.algorithm != 1:
        raise ValueError("run is not configured for algorithm 1")
    return train(run, out_dir)


def train_algorithm2(run: TrainRun, out_dir=None) -> TrainResult:
    """Temporal plus bidirectional spatial weighting; the sharpening guard
    must hold for all three weight families."""
    if run.algorithm != 2:
        raise ValueError("run is not configured for algorithm 2")
    return train(run, out_dir)


# -- artifacts ---------------------------------------------------------------------

def write_artifacts(run: TrainRun, result: TrainResult, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    hist_path = os.path.join(out_dir, "loss_history.csv")
    with open(hist_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for row in result.history:
            writer.writerow([row[c] if c == "epoch" else repr(float(row[c]))
                             for c in HISTORY_COLUMNS])
    if result.weight_history:
        n_w = result.weight_history[0]["weights"].size
        with open(os.path.join(out_dir, "weight_history.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "epsilon"] + [f"w_{i}" for i in range(n_w)])
            for row in result.weight_history:
                writer.writerow([row["epoch"], repr(float(row["epsilon"]))]
                                + [repr(float(v)) for v in row["weights"]])

    meta = run_metadata(run, result)
    save_checkpoint(result.network, os.path.join(out_dir, "checkpoint.txt"), meta)
    best_net = init_xavier(result.network.spec)
    best_net.set_params_flat(result.best_params)
    save_checkpoint(best_net, os.path.join(out_dir, "checkpoint_best.txt"),
                    dict(meta, best_loss=repr(result.best_loss)))
    manifest = {
        "problem": run.problem.kind,
        "scheme": run.scheme,
        "algorithm": run.algorithm,
        "epochs": result.epochs_run,
        "seed": run.seed,
        "loss_mode": run.loss_cfg.mode,
        "final_loss": result.final_loss,
        "best_loss": result.best_loss,
        "wall_seconds": result.wall_seconds,
        "config_hash": config_hash(run),
        "mesh": {"n_t": run.box.n_t, "n_x": run.box.n_x},
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def run_metadata(run: TrainRun, result: TrainResult) -> dict:
    return {
        "problem": run.problem.kind,
        "scheme": run.scheme,
        "algorithm": str(run.algorithm),
        "epochs_trained": str(result.epochs_run),
    }


def config_hash(run: TrainRun) -> str:
    blob = repr((run.problem, run.box, run.network.spec, run.loss_cfg,
                 run.scheme, run.stages, run.algorithm, run.delta_w,
                 run.m_eps, run.seed)).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _dump_divergence(run: TrainRun, out_dir, epoch: int, history) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    dump = {
        "event": "divergence",
        "epoch": epoch,
        "problem": run.problem.kind,
        "scheme": run.scheme,
        "history_tail": [dict(h) for h in history[-5:]],
    }
    with open(os.path.join(out_dir, "divergence_dump.json"), "w") as f:
        json.dump(dump, f, indent=2)
    save_checkpoint(run.network, os.path.join(out_dir, "checkpoint_diverged.txt"),
                    {"event": "divergence", "epoch": str(epoch)})
