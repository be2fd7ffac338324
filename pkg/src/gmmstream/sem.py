"""Stochastic (online) EM reference trainer.

Per mini-batch: a responsibility E-step through the full logsumexp
posterior, then a step-size-blended update of running sufficient
statistics, then an M-step that reads weights, centroids and diagonal
variances back off the statistics. Batch statistics are averaged (not
summed) before blending, so the step-size schedule means the same thing
at every batch size. The first slice of the first epoch only
accumulates statistics; the step-size clock starts after it.

Precision handling mirrors the SGD trainer: variances are floored at
1/d_max^2 before inversion and the Cholesky diagonals clipped into
[d_floor, d_max].
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, EmptyBatchError, ShapeError
from .likelihood import log_score_matrix, responsibility_matrix
from .model import D_FLOOR_FRACTION, GmmModel, TrainConfig, init_model
from .sgd import TrainReport, evaluate

STARVATION_MASS = 1e-12


@dataclass
class SemConfig:
    """Hyper-parameters of the stochastic EM trainer."""

    rho0: float = 0.05
    alpha_sem: float = 0.25
    rho_inf: float = 0.001
    batch_size: int = 1
    burnin_fraction: float = 0.10
    epochs: int = 3
    d_max: float = 20.0
    mstep_interval: int = 1  # M-step every this many post-burn-in batches

    def __post_init__(self):
        if not (0.0 < self.rho0 < 1.0):
            raise ConfigurationError("rho0 must lie in (0, 1)")
        if not (0.0 <= self.alpha_sem <= 0.5):
            raise ConfigurationError("alpha_sem must lie in [0, 0.5]")
        if self.rho_inf <= 0:
            raise ConfigurationError("rho_inf must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if not (0.0 <= self.burnin_fraction < 1.0):
            raise ConfigurationError("burnin_fraction must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be positive")
        if self.d_max <= 0:
            raise ConfigurationError("d_max must be positive")
        if self.mstep_interval < 1:
            raise ConfigurationError("mstep_interval must be positive")

    @property
    def d_floor(self) -> float:
        return D_FLOOR_FRACTION * self.d_max


@dataclass
class SufficientStats:
    """Blended per-component accumulators at sample-mean scale."""

    s0: np.ndarray  # (k,) responsibility mass
    s1: np.ndarray  # (k, dim) weighted sample sums
    s2: np.ndarray  # (k, dim) weighted squared-sample sums

    @classmethod
    def zeros(cls, k: int, dim: int) -> "SufficientStats":
        return cls(np.zeros(k), np.zeros((k, dim)), np.zeros((k, dim)))

    def blend(self, other: "SufficientStats", rho: float) -> None:
        self.s0 = (1.0 - rho) * self.s0 + rho * other.s0
        self.s1 = (1.0 - rho) * self.s1 + rho * other.s1
        self.s2 = (1.0 - rho) * self.s2 + rho * other.s2


def sem_step_size(t: int, config: SemConfig) -> float:
    """Polynomially decaying blend weight, floored at rho_inf."""
    return max(config.rho0 * (t + 1) ** (-0.5 + config.alpha_sem), config.rho_inf)


def batch_stats(model: GmmModel, X: np.ndarray) -> SufficientStats:
    """Responsibility-weighted statistics of one batch, divided by the
    batch size so they sit at sample-mean scale."""
    gamma = responsibility_matrix(model, X)
    b = X.shape[0]
    return SufficientStats(
        s0=gamma.sum(axis=0) / b,
        s1=(gamma.T @ X) / b,
        s2=(gamma.T @ X**2) / b,
    )


def mstep(model: GmmModel, stats: SufficientStats, config: SemConfig) -> int:
    """Write weights, centroids and precisions back from statistics.

    Components whose mass sits below the starvation threshold keep
    their previous centroid and precision; returns how many were
    skipped this round.
    """
    total = stats.s0.sum()
    if total <= 0.0:
        return model.k
    active = stats.s0 > STARVATION_MASS
    pi = stats.s0 / total
    model.xi = np.log(np.maximum(pi, 1e-300))

    s0 = stats.s0[active][:, None]
    mu = stats.s1[active] / s0
    var = stats.s2[active] / s0 - mu**2
    var = np.maximum(var, 1.0 / config.d_max**2)
    model.mu[active] = mu
    model.d_diag[active] = np.clip(1.0 / np.sqrt(var), config.d_floor, config.d_max)
    return int(np.count_nonzero(~active))


def sem_train(
    model: GmmModel,
    stream,
    config: SemConfig,
    eval_stream=None,
    on_log=None,
):
    """Run stochastic EM over the stream; returns ``(model, report)``.

    The input model is copied, not mutated. Log records (same field
    layout as the SGD trainer, with the blend weight in the ``eps``
    slot) are emitted roughly fifty times per run plus once per batch
    that starved a component.
    """
    if stream.dim != model.dim:
        raise ShapeError(f"stream dim {stream.dim} does not match model dim {model.dim}")
    if stream.n_samples == 0:
        raise EmptyBatchError("training stream is empty")

    model = model.copy()
    np.clip(model.d_diag, config.d_floor, config.d_max, out=model.d_diag)
    stats = SufficientStats.zeros(model.k, model.dim)

    batches_per_epoch = math.ceil(stream.n_samples / config.batch_size)
    burnin_batches = math.ceil(config.burnin_fraction * batches_per_epoch)
    total_batches = batches_per_epoch * config.epochs
    log_every = max(1, total_batches // 50)

    report = TrainReport()
    start = time.perf_counter()
    ema = None
    iteration = 0
    burnin_seen = 0
    t = 0  # step-size clock, starts after burn-in
    post_burnin_batches = 0
    starved_total = 0

    for _epoch in range(config.epochs):
        for X, _ in stream.batches(config.batch_size):
            fresh = batch_stats(model, X)
            rho = None
            starved = 0
            if burnin_seen < burnin_batches:
                # Pure accumulation: running mean of batch statistics.
                stats.blend(fresh, 1.0 / (burnin_seen + 1))
                burnin_seen += 1
            else:
                rho = sem_step_size(t, config)
                stats.blend(fresh, rho)
                t += 1
                post_burnin_batches += 1
                if post_burnin_batches % config.mstep_interval == 0:
                    starved = mstep(model, stats, config)
                    starved_total += starved

            iteration += 1
            batch_ll = float(np.mean(_batch_lse(model, X)))
            ema = batch_ll if ema is None else 0.95 * ema + 0.05 * batch_ll
            if iteration % log_every == 0:
                report.loss_trace.append((iteration, ema))
            if on_log is not None and (iteration % log_every == 0 or starved):
                on_log(
                    {
                        "iteration": iteration,
                        "ell": ema,
                        "sigma": None,
                        "eps": rho,
                        "delta": None,
                        "annealed": False,
                        "zero_denominator": False,
                        "starved": starved,
                    }
                )

    report.iterations = iteration
    summary = evaluate(model, eval_stream if eval_stream is not None else stream)
    report.final_max_component_loss = summary.max_component_loss
    report.final_full_log_likelihood = summary.full_log_likelihood
    report.mean_max_responsibility = summary.mean_max_responsibility
    report.wall_time = time.perf_counter() - start
    return model, report


def _batch_lse(model, X):
    from scipy.special import logsumexp

    return logsumexp(log_score_matrix(model, X), axis=1)


DEFAULT_GRIDS = {
    "rho0": (0.01, 0.05, 0.1),
    "alpha_sem": (0.01, 0.25, 0.5),
    "rho_inf": (0.01, 0.001, 0.0001),
}


def sem_grid_search(
    stream,
    grids=None,
    *,
    k: int,
    init_config: TrainConfig,
    base: SemConfig = None,
    eval_stream=None,
    init_mu=None,
):
    """Train one model per grid point and rank by final log-likelihood.

    Returns ``(best_config, rows)`` where rows are dicts sorted by
    descending final full log-likelihood. Every run re-initializes its
    model from ``init_config`` (optionally with shared k-means
    centroids ``init_mu``), so rankings are seed-stable.
    """
    grids = dict(DEFAULT_GRIDS if grids is None else grids)
    base = base if base is not None else SemConfig()
    rows = []
    for rho0, alpha_sem, rho_inf in itertools.product(
        grids["rho0"], grids["alpha_sem"], grids["rho_inf"]
    ):
        config = replace(base, rho0=rho0, alpha_sem=alpha_sem, rho_inf=rho_inf)
        model = init_model(k, stream.dim, init_config)
        if init_mu is not None:
            model.mu = np.array(init_mu, dtype=np.float64, copy=True)
        model, report = sem_train(model, stream, config, eval_stream=eval_stream)
        rows.append(
            {
                "rho0": rho0,
                "alpha_sem": alpha_sem,
                "rho_inf": rho_inf,
                "final_full_log_likelihood": report.final_full_log_likelihood,
                "final_max_component_loss": report.final_max_component_loss,
                "mean_max_responsibility": report.mean_max_responsibility,
            }
        )
    rows.sort(key=lambda r: r["final_full_log_likelihood"], reverse=True)
    best = rows[0]
    best_config = replace(
        base,
        rho0=best["rho0"],
        alpha_sem=best["alpha_sem"],
        rho_inf=best["rho_inf"],
    )
    return best_config, rows


def minibatch_kmeans(stream, k: int, seed: int, batch_size: int = 256, epochs: int = 1):
    """Seeded mini-batch k-means centroids over a stream.

    Centers start from k distinct samples chosen by the seeded RNG out
    of the stream's first max(4k, 1024) vectors, then one (or more)
    single-pass refinements with per-center learning rates 1/count.
    Deterministic for a fixed seed and stream order.
    """
    rng = np.random.default_rng(seed)
    head, _ = stream.to_array(limit=max(4 * k, 1024))
    if head.shape[0] < k:
        raise ConfigurationError(
            f"stream provides {head.shape[0]} samples, cannot seed {k} k-means centers"
        )
    pick = rng.choice(head.shape[0], size=k, replace=False)
    centers = head[pick].copy()
    counts = np.zeros(k)
    for _epoch in range(epochs):
        for X, _ in stream.batches(batch_size):
            # squared distances via expansion; avoids a (b, k, dim) tensor
            d2 = (X**2).sum(axis=1)[:, None] - 2.0 * (X @ centers.T) + (centers**2).sum(axis=1)[None, :]
            nearest = d2.argmin(axis=1)
            for c in np.unique(nearest):
                members = X[nearest == c]
                counts[c] += members.shape[0]
                eta = members.shape[0] / counts[c]
                centers[c] += eta * (members.mean(axis=0) - centers[c])
    return centers
