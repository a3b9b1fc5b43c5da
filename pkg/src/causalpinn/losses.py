"""Loss assembly over the collocation mesh.

Three modes:
  - reformulated: single residual term; the initial condition enters slice 0
    scaled by a discrete point-source factor (mesh rule N_t/T, or a
    relaxation-time rule for the two-channel wave system), with an optional
    cross term between the slice-0 residual and the initial gap.
  - vanilla: weighted composite of residual, initial and boundary mean
    squares.
  - mae: mean absolute residual plus initial gap, no point-source scale.

Assembly is split so the training loop can evaluate the mesh in row chunks:
`evaluate_chunk` builds the per-node terms for a slice range, and
`slice_loss_vector` reduces them (optionally with bidirectional spatial
weights) into the per-slice loss vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .network import FieldSample, Network
from .problems import DomainBox, gabs, gcol
from .reference import delta_relaxation_petrov

log = logging.getLogger(__name__)

LOG_FLOOR = float(np.finfo(np.float64).eps)

MODES = ("reformulated", "vanilla", "mae")
DELTA_RULES = ("mesh", "relaxation")


@dataclass(frozen=True)
class LossConfig:
    mode: str = "reformulated"
    lambda_ic: float = 1.0
    lambda_bc: float = 1.0
    lambda_r: float = 1.0
    include_cross_term: bool = True
    log_transform: bool = False
    delta_rule: str = "mesh"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.delta_rule not in DELTA_RULES:
            raise ValueError(f"unknown delta rule {self.delta_rule!r}")
        if self.mode == "vanilla" and min(self.lambda_ic, self.lambda_bc,
                                          self.lambda_r) <= 0:
            raise ValueError("composite-mode term multipliers must be positive")


def delta_scale(cfg: LossConfig, problem, box: DomainBox) -> float:
    """Discrete stand-in for the initial-time point source."""
    if cfg.delta_rule == "relaxation":
        return delta_relaxation_petrov(problem.alpha).delta
    return box.n_t / box.t_final


# -- array-level operations (shared by tests and the mesh assembler) ----------

def temporal_slice_loss(i: int, residuals, ic_gap=None, ic_residuals=None,
                        *, n_x: int, delta: float = None, n_t: int = None,
                        t_final: float = 1.0, include_cross: bool = True):
    """Loss of one time slice: (1/n_x) * [sum r^2  (+ slice-0 point-source
    terms: 2*delta*|r0*gap| and delta^2*gap^2)]. Inputs may be Vars or
    arrays; multi-channel inputs are lists per channel."""
    if delta is None:
        delta = n_t / t_final
    res = residuals if isinstance(residuals, (list, tuple)) else [residuals]
    total = None
    for r in res:
        term = _sum_all(r * r)
        total = term if total is None else total + term
    if i == 0 and ic_gap is not None:
        gaps = ic_gap if isinstance(ic_gap, (list, tuple)) else [ic_gap]
        r0s = ic_residuals if ic_residuals is not None else res
        r0s = r0s if isinstance(r0s, (list, tuple)) else [r0s]
        for r0, gap in zip(r0s, gaps):
            if include_cross:
                total = total + (2.0 * delta) * _sum_all(gabs(r0 * gap))
            total = total + (delta * delta) * _sum_all(gap * gap)
    return total * (1.0 / n_x)


def _sum_all(v):
    return ad.vsum(v) if isinstance(v, ad.Var) else np.sum(v)


def total_loss_reformulated(slice_losses, weights, n_t: int,
                            log_transform: bool = False):
    """(1/n_t) * sum_i w_i * L_i, optionally log-transformed (floored at
    machine epsilon, with a warning when the floor engages)."""
    w = np.asarray(weights, dtype=np.float64)
    total = _sum_all(slice_losses * w) * (1.0 / n_t)
    if not log_transform:
        return total
    if isinstance(total, ad.Var):
        if float(total.value) < LOG_FLOOR:
            log.warning("loss %g below the log floor; clamping", float(total.value))
            total = total + (LOG_FLOOR - float(total.value))
        return ad.log(total)
    if total < LOG_FLOOR:
        log.warning("loss %g below the log floor; clamping", total)
        total = LOG_FLOOR
    return math.log(total)


# -- chunked mesh assembly -----------------------------------------------------

@dataclass
class ChunkTerms:
    """Per-node loss ingredients for one contiguous range of time slices."""

    rows: tuple[int, int]
    grid: ad.Var                      # (rows, m) residual square sum over channels
    r2_values: np.ndarray             # same, as plain values (weighting stats)
    ic_cross_row: ad.Var | None = None  # (m,) 2*delta_t*|r0*gap| summed over channels
    ic_quad_row: ad.Var | None = None   # (m_ic,) delta_t^2*gap^2 summed over channels
    ic_mse: ad.Var | None = None        # mean squared initial gap (composite mode)
    ic_abs: ad.Var | None = None        # summed |gap| (absolute mode)
    corner: ad.Var | None = None        # point-source cross of both deltas at (0, x1)
    col0_extra: ad.Var | None = None    # (rows,) boundary point-source terms at node 0
    bc_mismatch: ad.Var | None = None   # (rows,) periodic boundary mismatch squares
    abs_sum: ad.Var | None = None       # summed |r| over the chunk (absolute mode)


def evaluate_chunk(problem, box: DomainBox, cfg: LossConfig, rows, sample: FieldSample,
                   ic_gap=None, ic_gap_resid=None, boundary_source: bool = False,
                   delta: float | None = None) -> ChunkTerms:
    """Build the loss ingredients for slices rows=[i0, i1) from an evaluated
    FieldSample over those rows (row-major over the residual x nodes).

    ic_gap / ic_gap_resid: per-channel gap Vars u(0,.) - g over all initial
    nodes and over the residual nodes (equal except on a singular axis);
    required when the range contains slice 0 and the mode needs them."""
    i0, i1 = rows
    nrow = i1 - i0
    xs = box.xs()
    xs_resid = xs[1:] if problem.singular_axis else xs
    m = xs_resid.size
    if delta is None:
        delta = delta_scale(cfg, problem, box)

    x_tiled = np.tile(xs_resid, nrow)
    residuals = problem.residual(sample, x_tiled)
    r2 = None
    for r in residuals:
        term = r * r
        r2 = term if r2 is None else r2 + term
    grid = ad.reshape(r2, (nrow, m))
    terms = ChunkTerms(rows=rows, grid=grid, r2_values=grid.value)

    if cfg.mode == "mae":
        acc = None
        for r in residuals:
            s = ad.vsum(gabs(r))
            acc = s if acc is None else acc + s
        terms.abs_sum = acc

    if boundary_source or (cfg.mode == "vanilla" and problem.periodic):
        u_cols = [_grid_col(gcol(sample.u, c), nrow, m) for c in range(problem.channels)]

    d_coeff = None
    if boundary_source:
        u_l, u_r = u_cols[0]
        d_coeff = 2.0 * problem.eta * (u_r * (u_l - u_r))
        delta_x = box.n_x / box.volume
        r_col = ad.take_index(ad.reshape(residuals[0], (nrow, m)), 0, axis=1)
        terms.col0_extra = ((2.0 * delta_x) * gabs(r_col * d_coeff)
                            + (delta_x * delta_x) * (d_coeff * d_coeff))

    if cfg.mode == "vanilla" and problem.periodic:
        mism = None
        for c in range(problem.channels):
            u_l, u_r = u_cols[c]
            term = (u_l - u_r) ** 2
            mism = term if mism is None else mism + term
        if problem.periodic_in_derivative:
            for c in range(problem.channels):
                ux_l, ux_r = _grid_col(gcol(sample.u_x, c), nrow, m)
                mism = mism + (ux_l - ux_r) ** 2
        terms.bc_mismatch = mism

    if i0 == 0 and ic_gap is not None:
        r0_rows = [ad.take_index(ad.reshape(r, (nrow, m)), 0, axis=0)
                   for r in residuals]
        if cfg.mode == "reformulated":
            if cfg.include_cross_term:
                cross = None
                for r0, gap_r in zip(r0_rows, ic_gap_resid):
                    term = gabs(r0 * gap_r)
                    cross = term if cross is None else cross + term
                terms.ic_cross_row = (2.0 * delta) * cross
                if boundary_source:
                    d0 = ad.take_index(d_coeff, 0, axis=0)
                    gap0 = ad.take_index(ic_gap_resid[0], 0, axis=0)
                    delta_x = box.n_x / box.volume
                    terms.corner = (2.0 * delta * delta_x) * gabs(d0 * gap0)
            quad = None
            for gap in ic_gap:
                term = gap * gap
                quad = term if quad is None else quad + term
            terms.ic_quad_row = (delta * delta) * quad
        elif cfg.mode == "vanilla":
            mse = None
            for gap in ic_gap:
                term = ad.vsum(gap * gap)
                mse = term if mse is None else mse + term
            terms.ic_mse = mse * (1.0 / ic_gap[0].value.size)
        else:  # mae
            acc = None
            for gap in ic_gap:
                s = ad.vsum(gabs(gap))
                acc = s if acc is None else acc + s
            terms.ic_abs = acc
    return terms


def _grid_col(u_chan: ad.Var, nrow: int, m: int):
    g = ad.reshape(u_chan, (nrow, m))
    return ad.take_index(g, 0, axis=1), ad.take_index(g, m - 1, axis=1)


def slice_loss_vector(terms: ChunkTerms, box: DomainBox,
                      spatial_row: np.ndarray | None = None) -> ad.Var:
    """Reduce chunk terms to the per-slice loss vector (length = rows).
    spatial_row holds the constant (w-> + w<-) node factors for the
    spatio-temporal variant; the point-source node terms share the factor of
    their node."""
    i0, i1 = terms.rows
    n_x = box.n_x
    if spatial_row is None:
        vec = ad.vsum(terms.grid, axis=1) * (1.0 / n_x)
        sw0 = 1.0
        sw_resid = None
    else:
        vec = ad.vsum(terms.grid * spatial_row, axis=1) * (1.0 / n_x)
        sw0 = float(spatial_row[0])
        sw_resid = spatial_row
    if terms.col0_extra is not None:
        vec = vec + terms.col0_extra * (sw0 / n_x)
    if i0 == 0 and (terms.ic_cross_row is not None or terms.ic_quad_row is not None):
        s0 = None
        if terms.ic_cross_row is not None:
            row = terms.ic_cross_row if sw_resid is None else terms.ic_cross_row * sw_resid
            s0 = ad.vsum(row) * (1.0 / n_x)
        if terms.ic_quad_row is not None:
            q = terms.ic_quad_row
            if sw_resid is not None:
                if q.value.size != sw_resid.size:
                    raise ValueError("spatial weighting over a mismatched initial node set")
                q = q * sw_resid
            quad = ad.vsum(q) * (1.0 / n_x)
            s0 = quad if s0 is None else s0 + quad
        if terms.corner is not None:
            s0 = s0 + terms.corner * (sw0 / n_x)
        onehot = np.zeros(i1 - i0)
        onehot[0] = 1.0
        vec = vec + s0 * onehot
    return vec


# -- one-shot whole-mesh evaluators (tests and small runs) ----------------------

def mesh_terms(graph: ad.Graph, net: Network, problem, box: DomainBox,
               cfg: LossConfig, boundary_source: bool = False):
    """Evaluate the full mesh as a single chunk; returns (terms, lifted)."""
    lifted = net.lift(graph)
    times, xs = box.times(), box.xs()
    xs_resid = xs[1:] if problem.singular_axis else xs
    tt = np.repeat(times, xs_resid.size)
    xx = np.tile(xs_resid, times.size)
    sample = lifted.forward_jets(tt, xx, x_order=problem.x_order)
    g0 = problem.initial(xs)
    if problem.singular_axis:
        s_ic = lifted.forward_jets(np.zeros(xs.size), xs, x_order=0,
                                   with_time=False)
        ic_gap = [gcol(s_ic.u, c) - g0[c] for c in range(problem.channels)]
        ic_gap_resid = [_slice_tail(g) for g in ic_gap]
    else:
        nrow, m = times.size, xs_resid.size
        u0_rows = [ad.take_index(ad.reshape(gcol(sample.u, c), (nrow, m)), 0, axis=0)
                   for c in range(problem.channels)]
        ic_gap = [u0 - g0[c] for c, u0 in enumerate(u0_rows)]
        ic_gap_resid = ic_gap
    terms = evaluate_chunk(problem, box, cfg, (0, times.size), sample,
                           ic_gap=ic_gap, ic_gap_resid=ic_gap_resid,
                           boundary_source=boundary_source)
    return terms, lifted


def _slice_tail(v: ad.Var) -> ad.Var:
    """All but element 0 of a 1-D Var."""
    n = v.value.size
    val = v.value[1:]

    def vjp(g):
        out = np.zeros(n)
        out[1:] = g
        return (out,)

    return v.graph._register(ad.Var(val, v.graph, (v,), vjp))


def total_loss_vanilla(graph: ad.Graph, net: Network, problem, box: DomainBox,
                       cfg: LossConfig, weights=None) -> ad.Var:
    """Composite total over the full mesh: lambda_ic * L_ic + lambda_bc * L_bc
    + lambda_r * L_r, with optional causal weights on the residual slices."""
    if cfg.mode != "vanilla":
        raise ValueError("composite total requires mode='vanilla'")
    terms, _ = mesh_terms(graph, net, problem, box, cfg)
    vec = slice_loss_vector(terms, box)
    w = np.ones(box.n_t + 1) if weights is None else np.asarray(weights)
    total = (cfg.lambda_r / box.n_t) * ad.vsum(vec * w)
    total = total + cfg.lambda_ic * terms.ic_mse
    if terms.bc_mismatch is not None:
        total = total + (cfg.lambda_bc / (box.n_t + 1)) * ad.vsum(terms.bc_mismatch)
    return total


def total_loss_mae(graph: ad.Graph, net: Network, problem, box: DomainBox,
                   cfg: LossConfig) -> ad.Var:
    """Mean absolute residual over the mesh plus (1/T) * mean absolute
    initial gap; no point-source scale enters."""
    if cfg.mode != "mae":
        raise ValueError("absolute total requires mode='mae'")
    terms, _ = mesh_terms(graph, net, problem, box, cfg)
    n_pts = terms.r2_values.size
    n_ic = box.n_x + 1
    total = terms.abs_sum * (1.0 / n_pts)
    total = total + terms.ic_abs * (1.0 / (box.t_final * n_ic))
    return total
