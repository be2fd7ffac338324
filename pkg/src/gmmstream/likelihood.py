"""Log-density scores, losses, responsibilities and analytic gradients.

Everything here stays in log space end to end: a per-component score is

    log pi_k + sum_i log d_{k,i} - (dim/2) log 2pi
             - 1/2 sum_i d_{k,i}^2 (x_i - mu_{k,i})^2

and no exponential of a distance is ever taken. That is what keeps both
losses and all gradients finite at arbitrary dimensionality, where the
textbook density (and even its logsumexp rescue) underflows.

Gradients are analytic rather than autodiff'd: the best-matching
component is treated as locally constant, so each parameter block gets
the closed form below weighted by the smoothing filter row of the BMU.
All accumulation is in float64 regardless of the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .annealing import FilterBank
from .errors import EmptyBatchError, ShapeError
from .model import GmmModel, log_weights

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ComponentScores:
    """Per-component log scores for one sample, plus the argmax index."""

    log_scores: np.ndarray
    bmu: int


@dataclass
class GradientSet:
    """Gradient blocks matching the model's parameter layout."""

    g_xi: np.ndarray   # (k,)
    g_mu: np.ndarray   # (k, dim)
    g_d: np.ndarray    # (k, dim)


def _as_batch(model: GmmModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ShapeError(
            f"batch shape {np.asarray(batch).shape} does not match model dim {model.dim}"
        )
    if x.shape[0] == 0:
        raise EmptyBatchError("batch must contain at least one sample")
    return x


def log_score_matrix(model: GmmModel, batch) -> np.ndarray:
    """(n, k) matrix of log(pi_k N_k(x_n)), fully in log space.

    Uses the expanded quadratic so the whole batch reduces to two
    matrix products; memory stays O(n*k + k*dim).
    """
    x = _as_batch(model, batch)
    p = model.d_diag**2                      # (k, dim) precision diagonals
    const = (
        log_weights(model)
        + np.log(model.d_diag).sum(axis=1)
        - 0.5 * model.dim * LOG_2PI
        - 0.5 * np.einsum("kd,kd->k", p, model.mu**2)
    )
    quad = x**2 @ p.T - 2.0 * (x @ (p * model.mu).T)
    return const[None, :] - 0.5 * quad


def component_log_scores(model: GmmModel, x) -> ComponentScores:
    """Score one sample against every component.

    The single-sample path evaluates the quadratic directly on (x - mu),
    which is the exact textbook form of the log density.
    """
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != model.dim:
        raise ShapeError(f"sample shape {v.shape} does not match model dim {model.dim}")
    diff = v[None, :] - model.mu
    quad = np.einsum("kd,kd->k", model.d_diag**2, diff**2)
    scores = (
        log_weights(model)
        + np.log(model.d_diag).sum(axis=1)
        - 0.5 * model.dim * LOG_2PI
        - 0.5 * quad
    )
    return ComponentScores(log_scores=scores, bmu=int(np.argmax(scores)))


def max_component_loss(model: GmmModel, batch) -> float:
    """Mean over the batch of the best component's log score.

    A lower bound on the full log-likelihood; the training objective
    once annealing has collapsed the filters to delta peaks.
    """
    scores = log_score_matrix(model, batch)
    return float(np.mean(scores.max(axis=1)))


def full_log_likelihood(model: GmmModel, batch) -> float:
    """Mean over the batch of logsumexp over components.

    Evaluation-only (and the E-step of the EM reference trainer); SGD
    never differentiates through this.
    """
    scores = log_score_matrix(model, batch)
    return float(np.mean(logsumexp(scores, axis=1)))


def responsibilities(model: GmmModel, x) -> np.ndarray:
    """Posterior component probabilities for one sample."""
    scores = component_log_scores(model, x).log_scores
    return np.exp(scores - logsumexp(scores))


def responsibility_matrix(model: GmmModel, batch) -> np.ndarray:
    """(n, k) posterior matrix for a batch; rows sum to one."""
    scores = log_score_matrix(model, batch)
    return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


def _check_bank(model: GmmModel, bank: FilterBank) -> None:
    if bank.k != model.k:
        raise ShapeError(
            f"filter bank built for k={bank.k} does not match model k={model.k}"
        )


def smoothed_best(scores: np.ndarray, bank: FilterBank):
    """Convolve score rows with the filter bank and pick the best cell.

    Returns ``(values, bmu)`` where ``values[n]`` is the largest
    smoothed sum for sample n and ``bmu[n]`` the component achieving it
    (lowest index on ties).
    """
    smoothed = scores @ bank.g.T
    bmu = np.argmax(smoothed, axis=1)
    values = smoothed[np.arange(scores.shape[0]), bmu]
    return values, bmu


def annealed_loss(model: GmmModel, batch, bank: FilterBank) -> float:
    """Smoothed max-component loss: mean best filter-weighted score sum."""
    _check_bank(model, bank)
    scores = log_score_matrix(model, batch)
    values, _ = smoothed_best(scores, bank)
    return float(np.mean(values))


def annealed_loss_and_gradients(model: GmmModel, batch, bank: FilterBank):
    """One forward/backward pass; returns ``(loss, GradientSet)``.

    With w_n the BMU's filter row for sample n and s_j = mean_n w_{n,j}:

        g_mu[j]  = mean_n w_{n,j} P_j (x_n - mu_j)
        g_d[j,i] = mean_n w_{n,j} (1/d_{j,i} - d_{j,i} (x_{n,i} - mu_{j,i})^2)
        g_xi     = mean_n (w_n - pi * sum_j w_{n,j})

    Evaluated through batch matrix products, so no (n, k, dim) tensor is
    ever materialized.
    """
    _check_bank(model, bank)
    x = _as_batch(model, batch)
    n = x.shape[0]
    scores = log_score_matrix(model, x)
    values, bmu = smoothed_best(scores, bank)
    loss = float(np.mean(values))

    w = bank.g[bmu]                       # (n, k) filter row per sample
    s = w.sum(axis=0) / n                 # (k,) mean filter mass per component
    wx = (w.T @ x) / n                    # (k, dim) sum_n w_nj x_n / n
    wx2 = (w.T @ x**2) / n                # (k, dim) sum_n w_nj x_n^2 / n

    p = model.d_diag**2
    g_mu = p * (wx - s[:, None] * model.mu)
    # mean_n w_nj (x_n - mu_j)^2, expanded around mu_j.
    sq = wx2 - 2.0 * model.mu * wx + s[:, None] * model.mu**2
    g_d = s[:, None] / model.d_diag - model.d_diag * sq

    pi = np.exp(log_weights(model))
    g_xi = w.mean(axis=0) - pi * s.sum()

    return loss, GradientSet(g_xi=g_xi, g_mu=g_mu, g_d=g_d)


def annealed_gradients(model: GmmModel, batch, bank: FilterBank) -> GradientSet:
    """Gradient blocks of :func:`annealed_loss` for a batch."""
    _, grads = annealed_loss_and_gradients(model, batch, bank)
    return grads
