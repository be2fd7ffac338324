"""Periodic grid smoothing filters and the annealing controller.

Components are laid out on a sqrt(K) x sqrt(K) torus. Each component k
owns a smoothing filter: a 2D Gaussian of width sigma centered on k,
evaluated at minimum-image (periodic) grid distance and normalized to
sum one. As sigma shrinks the filters approach delta peaks and the
smoothed training loss turns back into the plain max-component loss.

The controller lowers sigma (and the learning rate with it, same 0.9
factor) whenever the smoothed loss has stopped improving, measured by
the fractional increase of an exponentially smoothed average between
consecutive checks spaced 1/alpha iterations apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import TrainConfig

ANNEAL_FACTOR = 0.9


@dataclass(frozen=True)
class FilterBank:
    """Immutable K x K matrix of grid smoothing weights.

    Row k is the filter of component k flattened back to component
    order; ``g[k, j]`` depends only on the periodic grid displacement
    between k and j, every row sums to one, and the diagonal carries
    each row's maximum.
    """

    grid_side: int
    sigma: float
    g: np.ndarray

    @property
    def k(self) -> int:
        return self.grid_side * self.grid_side


def build_filters(k: int, sigma: float) -> FilterBank:
    """Build the filter bank for k components at smoothing width sigma."""
    if k < 1 or math.isqrt(k) ** 2 != k:
        raise ConfigurationError(
            f"component count k={k} must be a perfect square to build grid filters"
        )
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    side = math.isqrt(k)
    coords = np.arange(side)
    # Minimum-image displacement along one axis of the torus.
    diff = np.abs(coords[:, None] - coords[None, :])
    axial = np.minimum(diff, side - diff)
    sq = axial**2
    # Periodic squared grid distance between components, as a (k, k) table:
    # axes (row_a, col_a, row_b, col_b) flatten to component order.
    r2 = (sq[:, None, :, None] + sq[None, :, None, :]).reshape(k, k)
    g = np.exp(-r2 / (2.0 * sigma * sigma))
    g /= g.sum(axis=1, keepdims=True)
    g.setflags(write=False)
    return FilterBank(grid_side=side, sigma=float(sigma), g=g)


@dataclass
class AnnealingState:
    """Mutable controller state owned by exactly one trainer."""

    sigma: float
    eps: float
    ell: float = math.nan       # smoothed loss; seeded on first observation
    ell_prev: float = math.nan  # smoothed loss at the previous check
    loss0: float = math.nan     # very first observed loss, Delta's reference
    alpha: float = 0.0          # smoothing time scale, fixed to eps0
    iteration: int = 0

    @classmethod
    def fresh(cls, config: TrainConfig) -> "AnnealingState":
        return cls(sigma=config.sigma0, eps=config.eps0, alpha=config.eps0)

    @property
    def check_interval(self) -> int:
        return max(1, math.ceil(1.0 / self.alpha))

    @property
    def seeded(self) -> bool:
        return not math.isnan(self.loss0)


def update_sliding_loss(state: AnnealingState, loss_value: float) -> AnnealingState:
    """Blend one loss observation into the exponential average.

    The first observation seeds the average, the Delta reference loss0
    and the previous-check value all at once.
    """
    if not state.seeded:
        state.ell = float(loss_value)
        state.loss0 = float(loss_value)
        state.ell_prev = float(loss_value)
    else:
        state.ell = (1.0 - state.alpha) * state.ell + state.alpha * float(loss_value)
    return state


def check_and_anneal(state: AnnealingState, config: TrainConfig):
    """Run one stationarity check; decay sigma and eps if stalled.

    Returns ``(annealed, delta, zero_denominator)``. The fractional
    increase delta compares the smoothed loss now against the previous
    check, normalized by total progress since the first loss. A zero
    denominator (no progress since the start, which includes the very
    first check) counts as stationary and is flagged for the logs.
    """
    denom = state.ell_prev - state.loss0
    if denom == 0.0:
        delta = None
        stationary = True
        zero_denominator = True
    else:
        delta = (state.ell - state.ell_prev) / denom
        stationary = delta < config.delta
        zero_denominator = False
    if stationary:
        state.sigma = max(ANNEAL_FACTOR * state.sigma, config.sigma_inf)
        state.eps = max(ANNEAL_FACTOR * state.eps, config.eps_inf)
    state.ell_prev = state.ell
    return stationary, delta, zero_denominator
