"""Causal weighting of per-slice losses.

Four temporal families over the running history of slice losses: plain
exponential of the cumulative sum, exponential of the running mean, a sigmoid
(step-function regularization) and a Gaussian of the index-weighted running
mean (point-source regularization), plus bidirectional spatial weights and
the rule that sharpens the causality parameter as weights saturate.

Weights are always computed from loss *values* and treated as constants by
backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCHEMES = ("unweighted", "vanilla_causal", "mean_normalized", "heaviside",
           "dirac_gauss")


def cumulative_mean(losses: np.ndarray) -> np.ndarray:
    """s[i] = mean of losses[:i]; s[0] = 0 by convention (empty history)."""
    losses = np.asarray(losses, dtype=np.float64)
    s = np.zeros_like(losses)
    s[1:] = np.cumsum(losses)[:-1] / np.arange(1, losses.size)
    return s


def index_weighted_mean(losses: np.ndarray) -> np.ndarray:
    """s[i] = (1/i) * sum_{k<i} k*losses[k]; s[0] = 0."""
    losses = np.asarray(losses, dtype=np.float64)
    s = np.zeros_like(losses)
    s[1:] = np.cumsum(np.arange(losses.size) * losses)[:-1] / np.arange(1, losses.size)
    return s


def weights_vanilla(losses, eps: float) -> np.ndarray:
    """w[0] = 1, w[i] = exp(-eps * sum of all earlier losses)."""
    losses = np.asarray(losses, dtype=np.float64)
    w = np.ones_like(losses)
    with np.errstate(over="ignore"):
        w[1:] = np.exp(-eps * np.cumsum(losses)[:-1])
    return w


def weights_mean_normalized(losses, eps: float) -> np.ndarray:
    """w[i] = exp(-eps * running mean); stable under time-mesh refinement."""
    return np.exp(-eps * cumulative_mean(losses))


def weights_heaviside(losses, eps: float) -> np.ndarray:
    """Sigmoid of the running mean: w = 1/(1 + exp(2 eps s)); w = 1/2 at s = 0."""
    s = cumulative_mean(losses)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(2.0 * eps * s))


def weights_dirac(losses, eps: float) -> np.ndarray:
    """Gaussian of the index-weighted running mean: w = exp(-eps * s~^2)."""
    s = index_weighted_mean(losses)
    return np.exp(-eps * s * s)


_TEMPORAL = {
    "vanilla_causal": weights_vanilla,
    "mean_normalized": weights_mean_normalized,
    "heaviside": weights_heaviside,
    "dirac_gauss": weights_dirac,
}


def temporal_weights(scheme: str, losses, eps: float) -> np.ndarray:
    if scheme == "unweighted":
        return np.ones(np.asarray(losses).size)
    try:
        return _TEMPORAL[scheme](losses, eps)
    except KeyError:
        raise ValueError(f"unknown weighting scheme {scheme!r}") from None


def spatial_cumulative(col_losses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward stat s->[n] = mean of losses left of n; backward stat mirrors
    from the upper boundary inward. Empty ends are 0 (weight 1)."""
    col_losses = np.asarray(col_losses, dtype=np.float64)
    fwd = cumulative_mean(col_losses)
    bwd = cumulative_mean(col_losses[::-1])[::-1]
    return fwd, bwd


def weights_spatial(col_losses, eps: float) -> tuple[np.ndarray, np.ndarray]:
    fwd, bwd = spatial_cumulative(col_losses)
    return np.exp(-eps * fwd), np.exp(-eps * bwd)


@dataclass
class WeightState:
    """Per-epoch weight arrays plus the causality parameter and its
    sharpening rule. One trainer owns one instance."""

    scheme: str
    eps: float
    delta_w: float = 0.99
    m_eps: float = 2.0
    temporal: np.ndarray | None = None
    spatial_fwd: np.ndarray | None = None
    spatial_bwd: np.ndarray | None = None
    _guard_values: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown weighting scheme {self.scheme!r}")
        if self.eps <= 0:
            raise ValueError("causality parameter must be positive")

    def update_spatial(self, col_losses) -> tuple[np.ndarray, np.ndarray]:
        fwd, bwd = spatial_cumulative(col_losses)
        with np.errstate(over="ignore"):
            self.spatial_fwd = np.exp(-self.eps * fwd)
            self.spatial_bwd = np.exp(-self.eps * bwd)
        self._guard_values.append(float(np.exp(-self.eps * fwd.max())))
        self._guard_values.append(float(np.exp(-self.eps * bwd.max())))
        return self.spatial_fwd, self.spatial_bwd

    def update_temporal(self, slice_losses) -> np.ndarray:
        self.temporal = temporal_weights(self.scheme, slice_losses, self.eps)
        s_max = cumulative_mean(slice_losses).max()
        self._guard_values.append(float(np.exp(-self.eps * s_max)))
        return self.temporal

    def anneal(self) -> bool:
        """Sharpen eps when every guard value of this epoch exceeds delta_w.
        The guard uses the exponential of the running-mean statistic for all
        schemes, matching the stated update rule. Weights already computed
        this epoch are unaffected. Never fires for the unweighted scheme."""
        guards = self._guard_values
        self._guard_values = []
        if self.scheme == "unweighted" or not guards:
            return False
        if min(guards) > self.delta_w:
            self.eps *= self.m_eps
            return True
        return False


def anneal_epsilon(state: WeightState, slice_losses,
                   spatial_losses=None) -> WeightState:
    """One full weight-update-plus-sharpening step on fresh slice losses."""
    if spatial_losses is not None:
        state.update_spatial(spatial_losses)
    state.update_temporal(slice_losses)
    state.anneal()
    return state
