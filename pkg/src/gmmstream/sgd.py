"""Streaming SGD training loop.

One iteration consumes one mini-batch (a single sample by default):
score it, smooth the scores over the component grid with the current
filters, take the analytic gradients at the best-matching cell, ascend
all three parameter blocks with the shared learning rate, clip the
precisions, refresh the sliding loss and, every 1/alpha iterations, let
the annealing controller decide whether to shrink sigma and eps.

Memory stays at O(K * dim) plus one mini-batch regardless of stream
length, which is the whole point of training this way.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .annealing import (
    AnnealingState,
    build_filters,
    check_and_anneal,
    update_sliding_loss,
)
from .errors import EmptyBatchError, NonFiniteGradientError, ShapeError
from .likelihood import annealed_loss_and_gradients, log_score_matrix
from .model import GmmModel, TrainConfig, enforce_constraints
from scipy.special import logsumexp

EVAL_CHUNK = 512


@dataclass
class EvalSummary:
    """Held-out quality numbers for one model on one stream."""

    max_component_loss: float
    full_log_likelihood: float
    mean_max_responsibility: float
    n_samples: int


@dataclass
class TrainReport:
    """Everything a training run leaves behind besides the model."""

    loss_trace: list = field(default_factory=list)    # (iteration, ell)
    sigma_trace: list = field(default_factory=list)   # (iteration, sigma) per anneal event
    final_max_component_loss: float = float("nan")
    final_full_log_likelihood: float = float("nan")
    mean_max_responsibility: float = float("nan")
    wall_time: float = 0.0
    iterations: int = 0
    annealing_state: object = None  # final AnnealingState; not serialized here

    def to_dict(self) -> dict:
        return {
            "loss_trace": [[int(i), float(v)] for i, v in self.loss_trace],
            "sigma_trace": [[int(i), float(v)] for i, v in self.sigma_trace],
            "final_max_component_loss": self.final_max_component_loss,
            "final_full_log_likelihood": self.final_full_log_likelihood,
            "mean_max_responsibility": self.mean_max_responsibility,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
        }


def evaluate(model: GmmModel, stream) -> EvalSummary:
    """Score a stream: max-component loss, full log-likelihood and the
    mean of each sample's largest responsibility.

    Deterministic: fixed chunking and reduction order, so repeated
    calls return identical numbers.
    """
    if stream.dim != model.dim:
        raise ShapeError(f"stream dim {stream.dim} does not match model dim {model.dim}")
    total_max = 0.0
    total_lse = 0.0
    total_resp = 0.0
    n = 0
    for X, _ in stream.batches(EVAL_CHUNK):
        scores = log_score_matrix(model, X)
        best = scores.max(axis=1)
        lse = logsumexp(scores, axis=1)
        total_max += float(best.sum())
        total_lse += float(lse.sum())
        # max responsibility = exp(best - lse); no density is exponentiated
        total_resp += float(np.exp(best - lse).sum())
        n += X.shape[0]
    if n == 0:
        raise EmptyBatchError("cannot evaluate an empty stream")
    return EvalSummary(
        max_component_loss=total_max / n,
        full_log_likelihood=total_lse / n,
        mean_max_responsibility=total_resp / n,
        n_samples=n,
    )


def _check_finite(grads) -> None:
    for name, block in (("xi", grads.g_xi), ("mu", grads.g_mu), ("d_diag", grads.g_d)):
        if not np.all(np.isfinite(block)):
            raise NonFiniteGradientError(
                f"non-finite gradient in parameter block '{name}'"
            )


def train(
    model: GmmModel,
    stream,
    config: TrainConfig,
    eval_stream=None,
    on_check=None,
):
    """Run the annealed SGD loop; returns ``(trained_model, report)``.

    The input model is left untouched; training happens on a copy. The
    held-out numbers in the report come from ``eval_stream`` when given,
    otherwise from replaying the training stream. ``on_check`` receives
    one dict per annealing check (iteration, ell, sigma, eps, delta and
    flags) for structured logging.
    """
    if stream.dim != model.dim:
        raise ShapeError(f"stream dim {stream.dim} does not match model dim {model.dim}")
    if stream.n_samples == 0:
        raise EmptyBatchError("training stream is empty")

    model = model.copy()
    enforce_constraints(model, config)
    state = AnnealingState.fresh(config)
    bank = build_filters(model.k, state.sigma)
    report = TrainReport()
    start = time.perf_counter()
    iteration = 0

    for _epoch in range(config.epochs):
        for X, _ in stream.batches(config.batch_size):
            loss, grads = annealed_loss_and_gradients(model, X, bank)
            _check_finite(grads)

            eps = state.eps
            model.mu += eps * grads.g_mu
            model.d_diag += eps * grads.g_d
            model.xi += eps * grads.g_xi
            enforce_constraints(model, config)

            update_sliding_loss(state, loss)
            iteration += 1
            state.iteration = iteration

            if iteration % state.check_interval == 0:
                annealed, delta, zero_denom = check_and_anneal(state, config)
                report.loss_trace.append((iteration, state.ell))
                if annealed:
                    report.sigma_trace.append((iteration, state.sigma))
                    if bank.sigma != state.sigma:
                        bank = build_filters(model.k, state.sigma)
                if on_check is not None:
                    on_check(
                        {
                            "iteration": iteration,
                            "ell": state.ell,
                            "sigma": state.sigma,
                            "eps": state.eps,
                            "delta": delta,
                            "annealed": bool(annealed),
                            "zero_denominator": bool(zero_denom),
                        }
                    )

    report.iterations = iteration
    report.annealing_state = state
    summary = evaluate(model, eval_stream if eval_stream is not None else stream)
    report.final_max_component_loss = summary.max_component_loss
    report.final_full_log_likelihood = summary.full_log_likelihood
    report.mean_max_responsibility = summary.mean_max_responsibility
    report.wall_time = time.perf_counter() - start
    return model, report
