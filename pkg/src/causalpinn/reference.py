"""Independent high-accuracy reference solutions and the grid file format.

The periodic problems use Fourier pseudo-spectral discretization: the
dispersive wave equation with integrating-factor RK4, the stiff phase-field
equation with fourth-order exponential time differencing. The two-channel
wave system has a closed-form solution evaluated by damped fixed point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e3


@dataclass
class ReferenceGrid:
    """Dense (t, x) solution values per channel: values[c, i, n]."""

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.shape[1] != len(self.times) or self.values.shape[2] != len(self.xs):
            raise ValueError("grid value shape does not match axes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]


# -- dispersive wave equation (periodic, integrating-factor RK4) -------------

def solve_kdv_pseudospectral(eta: float = 1.0, mu: float = 0.022,
                             n_modes: int = 512, dt: float = 1e-5,
                             t_final: float = 1.0, n_t_out: int = 100,
                             n_x_out: int | None = None) -> ReferenceGrid:
    """March u_t + eta*u*u_x + mu^2*u_xxx = 0 on [-1, 1) from cos(pi x)."""
    if n_modes < 256 or n_modes & (n_modes - 1):
        raise ValueError("n_modes must be a power of two >= 256")
    n = n_modes
    x = -1.0 + 2.0 * np.arange(n) / n
    k = math.pi * np.arange(n // 2 + 1)          # rfft wavenumbers, period 2
    u = np.cos(math.pi * x)
    v = np.fft.rfft(u)

    gfac = -0.5j * eta * k * dt                   # nonlinear term u*u_x = (u^2)_x / 2
    e_half = np.exp(0.5j * (mu * mu) * (k ** 3) * dt)
    e_full = e_half * e_half

    steps_total = int(round(t_final / dt))
    save_every = max(1, steps_total // n_t_out)
    if steps_total % n_t_out:
        # keep save instants exact: stretch dt a hair so the grid divides
        steps_total = save_every * n_t_out
        dt = t_final / steps_total
        gfac = -0.5j * eta * k * dt
        e_half = np.exp(0.5j * (mu * mu) * (k ** 3) * dt)
        e_full = e_half * e_half

    def nonlin(vh):
        w = np.fft.irfft(vh, n)
        return gfac * np.fft.rfft(w * w)

    frames = [u.copy()]
    for step in range(1, steps_total + 1):
        a = nonlin(v)
        b = nonlin(e_half * (v + a / 2.0))
        c = nonlin(e_half * v + b / 2.0)
        d = nonlin(e_full * v + e_half * c)
        v = e_full * (v + a / 6.0) + e_half * (b + c) / 3.0 + d / 6.0
        if step % save_every == 0:
            u = np.fft.irfft(v, n)
            if np.max(np.abs(u)) > BLOWUP_LIMIT:
                raise FloatingPointError("pseudo-spectral solution blew up")
            frames.append(u.copy())
    times = np.linspace(0.0, t_final, n_t_out + 1)
    vals = np.array(frames)

    meta = {"solver": "kdv_ifrk4", "n_modes": n, "dt": dt,
            "eta": eta, "mu": mu}
    if n_x_out is None:
        return ReferenceGrid(times, x, vals, dict(meta, endpoint_excluded=True))
    return _resample_periodic(times, x, vals, n_x_out, meta, x1=-1.0, x2=1.0)


def grid_mass(grid: ReferenceGrid) -> np.ndarray:
    """integral of u dx per saved time (trapezoid; exact rectangle rule on
    periodic solver grids that omit the duplicate right endpoint)."""
    vals = grid.values[0]
    if grid.meta.get("endpoint_excluded"):
        dx = grid.xs[1] - grid.xs[0]
        return vals.sum(axis=1) * dx
    return np.trapezoid(vals, grid.xs, axis=1)


def grid_momentum(grid: ReferenceGrid) -> np.ndarray:
    """integral of u^2 dx per saved time."""
    sq = ReferenceGrid(grid.times, grid.xs, grid.values[0] ** 2, dict(grid.meta))
    return grid_mass(sq)


def _resample_periodic(times, x_src, vals, n_x_out, meta, x1, x2):
    """Sample a periodic solver grid onto n_x_out+1 uniform nodes including
    both endpoints (exact copy when the meshes nest, trigonometric
    interpolation otherwise)."""
    n = len(x_src)
    xs_out = np.linspace(x1, x2, n_x_out + 1)
    if n % n_x_out == 0:
        stride = n // n_x_out
        take = (np.arange(n_x_out + 1) * stride) % n
        out = vals[:, take]
    else:
        coeff = np.fft.rfft(vals, axis=1) / n
        k = np.arange(coeff.shape[1])
        scale = np.full(k.shape, 2.0)
        scale[0] = 1.0
        if n % 2 == 0:
            scale[-1] = 1.0  # real Nyquist mode appears once in rfft
        phase = np.exp(1j * (2.0 * math.pi / (x2 - x1)) * np.outer(xs_out - x_src[0], k))
        out = np.einsum("tk,xk->tx", coeff * scale, phase).real
    return ReferenceGrid(times, xs_out, out, meta)


# -- stiff phase-field equation (ETDRK4) --------------------------------------

def solve_allen_cahn_spectral(n_modes: int = 1024, dt: float = 1e-4,
                              t_final: float = 1.0, diffusion: float = 1e-4,
                              reaction: float = 5.0, n_t_out: int = 100,
                              n_x_out: int | None = None) -> ReferenceGrid:
    """March u_t = diffusion*u_xx - reaction*(u^3 - u) on [-1, 1) from
    x^2 cos(pi x), fourth-order exponential time differencing."""
    n = n_modes
    x = -1.0 + 2.0 * np.arange(n) / n
    k = math.pi * np.arange(n // 2 + 1)
    u = x * x * np.cos(math.pi * x)
    v = np.fft.rfft(u)

    lin = -diffusion * k * k + reaction
    steps_total = int(round(t_final / dt))
    save_every = max(1, steps_total // n_t_out)
    if steps_total % n_t_out:
        steps_total = save_every * n_t_out
        dt = t_final / steps_total

    e_full = np.exp(dt * lin)
    e_half = np.exp(0.5 * dt * lin)
    # phi functions by contour integration (stable for small |L dt|)
    m_pts = 32
    r = np.exp(1j * math.pi * (np.arange(1, m_pts + 1) - 0.5) / m_pts)
    lr = dt * lin[:, None] + r[None, :]
    q = dt * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = dt * np.real(np.mean((-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3, axis=1))
    f2 = dt * np.real(np.mean((2.0 + lr + np.exp(lr) * (-2.0 + lr)) / lr ** 3, axis=1))
    f3 = dt * np.real(np.mean((-4.0 - 3.0 * lr - lr ** 2 + np.exp(lr) * (4.0 - lr)) / lr ** 3, axis=1))

    def nonlin(vh):
        w = np.fft.irfft(vh, n)
        return np.fft.rfft(-reaction * w ** 3)

    frames = [u.copy()]
    for step in range(1, steps_total + 1):
        nv = nonlin(v)
        a = e_half * v + q * nv
        na = nonlin(a)
        b = e_half * v + q * na
        nb = nonlin(b)
        c = e_half * a + q * (2.0 * nb - nv)
        nc = nonlin(c)
        v = e_full * v + nv * f1 + 2.0 * (na + nb) * f2 + nc * f3
        if step % save_every == 0:
            u = np.fft.irfft(v, n)
            if np.max(np.abs(u)) > BLOWUP_LIMIT:
                raise FloatingPointError("spectral solution blew up")
            frames.append(u.copy())
    times = np.linspace(0.0, t_final, n_t_out + 1)
    vals = np.array(frames)
    meta = {"solver": "allen_cahn_etdrk4", "n_modes": n, "dt": dt,
            "diffusion": diffusion, "reaction": reaction}
    if n_x_out is None:
        return ReferenceGrid(times, x, vals, dict(meta, endpoint_excluded=True))
    return _resample_periodic(times, x, vals, n_x_out, meta, x1=-1.0, x2=1.0)


# -- exact two-channel wave solution ------------------------------------------

def eval_petrov_kudrin_exact(tau, rho, alpha: float = 1.0, eps1: float = 2.0,
                             tol: float = 1e-12, max_iter: int = 5000):
    """Self-consistent (E, H) of the axially-symmetric wave system.

    The closed form couples E, H and the retarded phase theta; a damped fixed
    point resolves it, with a per-point bisection fallback on E. Raises if a
    point stays unresolved (reported singular).
    """
    tau = np.asarray(tau, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    tau_b, rho_b = np.broadcast_arrays(tau, rho)
    shape = tau_b.shape
    tau_f = tau_b.reshape(-1)
    rho_f = rho_b.reshape(-1)

    e = (1.0 + rho_f * rho_f) ** -1.5
    h = np.zeros_like(e)
    sq = math.sqrt(eps1)
    converged = False
    for _ in range(max_iter):
        e_new, h_new = _pk_map(e, h, tau_f, rho_f, alpha, sq)
        de = np.max(np.abs(e_new - e))
        dh = np.max(np.abs(h_new - h))
        e = e + 0.5 * (e_new - e)
        h = h + 0.5 * (h_new - h)
        if max(de, dh) < tol:
            converged = True
            break
    if not converged:
        bad = _pk_nonconverged_mask(e, h, tau_f, rho_f, alpha, sq, tol)
        for idx in np.nonzero(bad)[0]:
            e[idx], h[idx] = _pk_bisect(tau_f[idx], rho_f[idx], alpha, sq, tol)
    return e.reshape(shape), h.reshape(shape)


def _pk_map(e, h, tau, rho, alpha, sq):
    theta = tau + alpha * rho * h / (2.0 * sq)
    one_m = 1.0 - 1j * theta
    z = one_m ** 2 + rho * rho * np.exp(alpha * e)
    w = z ** -1.5
    e_new = np.real(w * one_m)
    h_new = sq * rho * np.exp(alpha * e) * np.real(1j * w)
    return e_new, h_new


def _pk_nonconverged_mask(e, h, tau, rho, alpha, sq, tol):
    e_new, h_new = _pk_map(e, h, tau, rho, alpha, sq)
    return (np.abs(e_new - e) > tol) | (np.abs(h_new - h) > tol)


def _pk_bisect(tau, rho, alpha, sq, tol):
    """Bisection on E with H sub-iterated at fixed E; bracket [-5, 5]."""
    def solve_h(ev):
        hv = 0.0
        for _ in range(5000):
            theta = tau + alpha * rho * hv / (2.0 * sq)
            z = (1.0 - 1j * theta) ** 2 + rho * rho * math.exp(alpha * ev)
            h_new = sq * rho * math.exp(alpha * ev) * (1j * z ** -1.5).real
            if abs(h_new - hv) < tol:
                return h_new
            hv += 0.5 * (h_new - hv)
        return hv

    def gap(ev):
        hv = solve_h(ev)
        theta = tau + alpha * rho * hv / (2.0 * sq)
        one_m = 1.0 - 1j * theta
        z = one_m ** 2 + rho * rho * math.exp(alpha * ev)
        return ev - (z ** -1.5 * one_m).real

    lo, hi = -5.0, 5.0
    glo, ghi = gap(lo), gap(hi)
    if glo * ghi > 0:
        raise FloatingPointError(
            f"exact-solution point (tau={tau}, rho={rho}) is singular")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        gm = gap(mid)
        if abs(gm) < tol:
            break
        if glo * gm <= 0:
            hi = mid
        else:
            lo, glo = mid, gm
    ev = 0.5 * (lo + hi)
    return ev, solve_h(ev)


def petrov_kudrin_grid(box_times, box_xs, alpha: float = 1.0,
                       eps1: float = 2.0) -> ReferenceGrid:
    """Exact solution sampled on a mesh (times = tau axis, xs = rho axis)."""
    tt, rr = np.meshgrid(box_times, box_xs, indexing="ij")
    e, h = eval_petrov_kudrin_exact(tt, rr, alpha, eps1)
    meta = {"solver": "petrov_kudrin_exact", "alpha": alpha, "eps1": eps1}
    return ReferenceGrid(np.asarray(box_times), np.asarray(box_xs),
                         np.stack([e, h]), meta)


# -- point-source relaxation scale ---------------------------------------------

@dataclass(frozen=True)
class DeltaRelaxation:
    """Field-halving time of the on-axis decay model and the derived
    point-source approximation 1/(2*tau_half)."""

    alpha: float
    tau_half: float
    delta: float


def delta_relaxation_petrov(alpha: float) -> DeltaRelaxation:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    tau_half = math.acos(math.exp(-alpha / 2.0)) / math.sqrt(6.0 * alpha)
    return DeltaRelaxation(alpha, tau_half, 1.0 / (2.0 * tau_half))


def on_axis_field_decay(tau, alpha: float) -> np.ndarray:
    """Closed-form on-axis field model E~(tau) = log(e^alpha cos(tau sqrt(6a)))/alpha."""
    tau = np.asarray(tau, dtype=np.float64)
    return np.log(np.exp(alpha) * np.cos(tau * math.sqrt(6.0 * alpha))) / alpha


# -- grid file format ------------------------------------------------------------

def save_grid(grid: ReferenceGrid, path) -> None:
    """Text format, one row per (t-index, x-index): t, x, channel values.
    Floats carry 17 significant digits so files round-trip bit-exactly."""
    nt, nx = len(grid.times), len(grid.xs)
    with open(path, "w") as f:
        f.write(f"#grid channels={grid.channels} nt={nt} nx={nx} "
                f"t0={grid.times[0]:.17g} T={grid.times[-1]:.17g} "
                f"x1={grid.xs[0]:.17g} x2={grid.xs[-1]:.17g}\n")
        for i in range(nt):
            t = grid.times[i]
            for n in range(nx):
                row = [f"{t:.17g}", f"{grid.xs[n]:.17g}"]
                row += [f"{grid.values[c, i, n]:.17g}" for c in range(grid.channels)]
                f.write(" ".join(row) + "\n")


def load_grid(path) -> ReferenceGrid:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("#grid "):
            raise ValueError(f"{path}: not a grid file")
        fields = dict(tok.split("=") for tok in header[6:].split())
        c, nt, nx = int(fields["channels"]), int(fields["nt"]), int(fields["nx"])
        data = np.loadtxt(f)
    if data.shape != (nt * nx, 2 + c):
        raise ValueError(f"{path}: expected {nt * nx} rows with {2 + c} columns")
    times = data[::nx, 0].copy()
    xs = data[:nx, 1].copy()
    values = data[:, 2:].reshape(nt, nx, c).transpose(2, 0, 1).copy()
    return ReferenceGrid(times, xs, values, {"source": str(path)})
