"""Concrete PDE problem definitions: residual operators, initial/boundary
data, domains. Residual expressions are written generically so they evaluate
on graph Vars during training and on plain arrays in value-only sweeps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .network import FieldSample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DomainBox:
    """Space-time box with a uniform mesh of n_t x n_x intervals."""

    t_final: float
    x1: float
    x2: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if self.t_final <= 0 or self.x2 <= self.x1:
            raise ValueError("degenerate domain")
        if self.n_t < 1 or self.n_x < 1:
            raise ValueError("mesh needs at least one interval per axis")

    @property
    def volume(self) -> float:
        return self.x2 - self.x1

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_t + 1)

    def xs(self) -> np.ndarray:
        return np.linspace(self.x1, self.x2, self.n_x + 1)


def gexp(v):
    return ad.exp(v) if isinstance(v, ad.Var) else np.exp(v)


def gabs(v):
    return ad.absval(v) if isinstance(v, ad.Var) else np.abs(v)


def gcol(v, j: int):
    return ad.take_index(v, j, axis=1) if isinstance(v, ad.Var) else v[:, j]


# -- residual operators ------------------------------------------------------

def residual_allen_cahn(u, u_t, u_xx, diffusion: float = 1e-4,
                        reaction: float = 5.0):
    """u_t - diffusion*u_xx + reaction*(u^3 - u); zero on a solution."""
    return u_t - diffusion * u_xx + reaction * (u ** 3) - reaction * u


def residual_kdv(u, u_t, u_x, u_xxx, eta: float, mu: float):
    """u_t + eta*u*u_x + mu^2*u_xxx; zero on a solution."""
    return u_t + eta * (u * u_x) + (mu * mu) * u_xxx


def residual_petrov_kudrin(e, e_t, e_rho, h, h_t, h_rho, inv_rho,
                           alpha: float, eps1: float):
    """Two-channel wave system residuals (electric, magnetic); the magnetic
    channel carries the axial 1/rho term, so inv_rho must be finite."""
    r_e = e_rho - (eps1 ** -0.5) * h_t
    r_h = h_rho + h * inv_rho - (eps1 ** 0.5) * (gexp(alpha * e) * e_t)
    return r_e, r_h


def boundary_gap_coefficient(u_left, u_right, eta: float):
    """Mismatch coefficient 2*eta*u(X2)*[u(X1) - u(X2)] carried by the
    boundary point source in the periodic reformulation."""
    return 2.0 * eta * (u_right * (u_left - u_right))


def kdv_boundary_gap(graph: ad.Graph, net, t, x1: float, x2: float,
                     eta: float) -> ad.Var:
    """Boundary point-source coefficient at time(s) t, parameter-differentiable."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    lifted = net.lift(graph)
    s_l = lifted.forward_jets(t, np.full_like(t, x1), x_order=0, with_time=False)
    s_r = lifted.forward_jets(t, np.full_like(t, x2), x_order=0, with_time=False)
    return boundary_gap_coefficient(gcol(s_l.u, 0), gcol(s_r.u, 0), eta)


# -- problem definitions -----------------------------------------------------

@dataclass(frozen=True)
class AllenCahn:
    """Phase-field reaction-diffusion equation, periodic on [x1, x2]."""

    diffusion: float = 1e-4
    reaction: float = 5.0

    kind = "allen_cahn"
    channels = 1
    periodic = True
    periodic_in_derivative = True  # boundary condition also matches u_x
    x_order = 2
    singular_axis = False

    def initial(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x * x * np.cos(math.pi * x))[None, :]

    def residual(self, s: FieldSample, x=None) -> list:
        u, u_t, u_xx = gcol(s.u, 0), gcol(s.u_t, 0), gcol(s.u_xx, 0)
        return [residual_allen_cahn(u, u_t, u_xx, self.diffusion, self.reaction)]


@dataclass(frozen=True)
class KortewegDeVries:
    """Dispersive nonlinear wave equation, periodic on [x1, x2]."""

    eta: float = 1.0
    mu: float = 0.022

    kind = "kdv"
    channels = 1
    periodic = True
    periodic_in_derivative = False
    x_order = 3
    singular_axis = False

    def __post_init__(self):
        if self.mu == 0:
            raise ValueError("dispersion coefficient must be nonzero")

    def initial(self, x: np.ndarray) -> np.ndarray:
        return np.cos(math.pi * np.asarray(x, dtype=np.float64))[None, :]

    def residual(self, s: FieldSample, x=None) -> list:
        u, u_t = gcol(s.u, 0), gcol(s.u_t, 0)
        u_x, u_xxx = gcol(s.u_x, 0), gcol(s.u_xxx, 0)
        return [residual_kdv(u, u_t, u_x, u_xxx, self.eta, self.mu)]


@dataclass(frozen=True)
class PetrovKudrin:
    """Axially-symmetric intense wave propagation in a nonlinear medium.
    Channel 0 is the electric field, channel 1 the magnetic field; the time
    role is played by the tau axis and the space role by rho."""

    alpha: float = 1.0
    eps1: float = 2.0

    kind = "petrov_kudrin"
    channels = 2
    periodic = False
    periodic_in_derivative = False
    x_order = 1
    singular_axis = True  # rho = 0 is excluded from residual sums

    def __post_init__(self):
        if self.eps1 <= 0:
            raise ValueError("permittivity must be positive")

    def initial(self, rho: np.ndarray) -> np.ndarray:
        e0 = petrov_kudrin_initial_field(rho, self.alpha)
        return np.stack([e0, np.zeros_like(e0)])

    def residual(self, s: FieldSample, x=None) -> list:
        rho = np.asarray(x, dtype=np.float64)
        if np.any(rho <= 0):
            raise ValueError("residual is singular on the rho = 0 axis")
        r_e, r_h = residual_petrov_kudrin(
            gcol(s.u, 0), gcol(s.u_t, 0), gcol(s.u_x, 0),
            gcol(s.u, 1), gcol(s.u_t, 1), gcol(s.u_x, 1),
            1.0 / rho, self.alpha, self.eps1)
        return [r_e, r_h]


def petrov_kudrin_initial_field(rho, alpha: float, tol: float = 1e-12,
                                max_iter: int = 200) -> np.ndarray:
    """Solve E = [1 + rho^2 exp(alpha E)]^(-3/2) by damped fixed point."""
    rho = np.asarray(rho, dtype=np.float64)
    e = (1.0 + rho * rho) ** -1.5
    for it in range(max_iter):
        target = (1.0 + rho * rho * np.exp(alpha * e)) ** -1.5
        delta = target - e
        e = e + 0.5 * delta
        if np.max(np.abs(delta)) < tol:
            log.debug("initial-field fixed point converged in %d iterations", it + 1)
            return e
    raise RuntimeError("initial-field iteration did not converge")


PROBLEM_KINDS = {
    "allen_cahn": AllenCahn,
    "kdv": KortewegDeVries,
    "petrov_kudrin": PetrovKudrin,
}


def make_problem(kind: str, **params):
    try:
        cls = PROBLEM_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown problem kind {kind!r}") from None
    return cls(**params)


def default_box(kind: str, n_t: int = 100, n_x: int = 256) -> DomainBox:
    """Canonical domains: unit-time periodic [-1,1] for the wave/phase-field
    problems, [0,4.75]x[0,5] for the two-channel system."""
    if kind == "petrov_kudrin":
        return DomainBox(4.75, 0.0, 5.0, n_t, n_x)
    return DomainBox(1.0, -1.0, 1.0, n_t, n_x)
