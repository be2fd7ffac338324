"""Mixture model parameters, constraint enforcement and persistence.

The model keeps the free parameterization that makes plain gradient
ascent safe: component weights live as unconstrained logits ``xi``
(softmax recovers the simplex), and each component's diagonal precision
matrix is stored through its Cholesky diagonal ``d_diag`` so the
precision ``P = d_diag**2`` is positive by construction. The only
projection ever needed after a gradient step is clipping ``d_diag``
into ``[d_floor, d_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigurationError,
    ModelParseError,
    ModelVersionError,
    ShapeError,
)

MODEL_MAGIC = "gmmstream-model"
MODEL_VERSION = 1

# Fraction of d_max used as the lower clip bound for d_diag. A zero
# lower bound would admit zero precision and an undefined log det.
D_FLOOR_FRACTION = 1e-6


@dataclass
class TrainConfig:
    """Hyper-parameters of the streaming SGD trainer.

    Defaults reproduce the reference experimental setup: mini-batches of
    one sample, learning rate 1e-3 decaying to 1e-4, smoothing radius
    2.0 decaying to 0.01, stationarity threshold 0.05, precision cap 20
    and centroid init range 0.1.
    """

    batch_size: int = 1
    epochs: int = 3
    eps0: float = 0.001
    eps_inf: float = 0.0001
    sigma0: float = 2.0
    sigma_inf: float = 0.01
    delta: float = 0.05
    d_max: float = 20.0
    mu_i: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be a positive integer")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be a positive integer")
        if not (self.eps0 > 0 and self.eps_inf > 0):
            raise ConfigurationError("learning rates must be positive")
        if self.eps_inf > self.eps0:
            raise ConfigurationError("eps_inf must not exceed eps0")
        if not (self.sigma0 > 0 and self.sigma_inf > 0):
            raise ConfigurationError("annealing radii must be positive")
        # Equality is allowed: sigma_inf == sigma0 turns annealing off.
        if self.sigma_inf > self.sigma0:
            raise ConfigurationError("sigma_inf must not exceed sigma0")
        if not (0.0 < self.delta < 1.0):
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.d_max <= 0:
            raise ConfigurationError("d_max must be positive")
        if self.mu_i < 0:
            raise ConfigurationError("mu_i must be non-negative")

    @property
    def d_floor(self) -> float:
        return D_FLOOR_FRACTION * self.d_max


@dataclass
class GmmModel:
    """All trainable parameters of a diagonal-precision Gaussian mixture.

    ``k`` must be a perfect square because the annealing filters arrange
    components on a sqrt(K) x sqrt(K) grid.
    """

    k: int
    dim: int
    xi: np.ndarray = field(repr=False)      # (k,) weight logits
    mu: np.ndarray = field(repr=False)      # (k, dim) centroids
    d_diag: np.ndarray = field(repr=False)  # (k, dim) Cholesky diagonals

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.k)

    def precision(self) -> np.ndarray:
        """Diagonal precision entries, P[k, i] = d_diag[k, i]**2."""
        return self.d_diag**2

    def copy(self) -> "GmmModel":
        return replace(
            self, xi=self.xi.copy(), mu=self.mu.copy(), d_diag=self.d_diag.copy()
        )


def _require_square(k: int) -> None:
    if k < 1:
        raise ConfigurationError("component count k must be positive")
    if math.isqrt(k) ** 2 != k:
        raise ConfigurationError(
            f"component count k={k} must be a perfect square (annealing grid is sqrt(K) x sqrt(K))"
        )


def init_model(k, dim, config: TrainConfig, rng=None) -> GmmModel:
    """Build a fresh model: uniform weights, small random centroids,
    Cholesky diagonals pinned at the cap d_max.

    ``rng`` may be a ``numpy.random.Generator`` or a seed; when omitted,
    ``config.seed`` is used, so a fixed config reproduces the same model.
    """
    _require_square(k)
    if dim < 1:
        raise ConfigurationError("dim must be a positive integer")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    xi = np.zeros(k)
    mu = rng.uniform(-config.mu_i, config.mu_i, size=(k, dim))
    d_diag = np.full((k, dim), float(config.d_max))
    return GmmModel(k=k, dim=dim, xi=xi, mu=mu, d_diag=d_diag)


def weights(model: GmmModel) -> np.ndarray:
    """Mixture weights softmax(xi); max-subtracted so overflow cannot occur."""
    z = model.xi - model.xi.max()
    e = np.exp(z)
    return e / e.sum()


def log_weights(model: GmmModel) -> np.ndarray:
    """log softmax(xi), computed without forming large exponentials."""
    z = model.xi - model.xi.max()
    return z - np.log(np.exp(z).sum())


def enforce_constraints(model: GmmModel, config: TrainConfig) -> GmmModel:
    """Clamp every Cholesky diagonal into [d_floor, d_max], in place.

    Weights need no projection (softmax keeps them normalized) and
    centroids are unconstrained. Idempotent by construction.
    """
    np.clip(model.d_diag, config.d_floor, config.d_max, out=model.d_diag)
    return model


def _format_floats(values) -> str:
    # repr() of a Python float is the shortest decimal string that
    # round-trips exactly, which keeps the file diffable and bit-exact.
    return " ".join(repr(float(v)) for v in values)


def save_model(model: GmmModel, annealing_state, path) -> None:
    """Write a versioned text snapshot of the model and, when given,
    the annealing controller state. Round-trips bit-exactly."""
    lines = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"k {model.k} dim {model.dim}",
        "xi " + _format_floats(model.xi),
    ]
    for row in model.mu:
        lines.append("mu " + _format_floats(row))
    for row in model.d_diag:
        lines.append("d " + _format_floats(row))
    if annealing_state is not None:
        s = annealing_state
        lines.append(
            "anneal "
            + _format_floats(
                [s.sigma, s.eps, s.ell, s.ell_prev, s.loss0, s.alpha]
            )
            + f" {s.iteration}"
        )
    lines.append("end")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_float_row(tag, body, expect, lineno):
    parts = body.split()
    if len(parts) != expect:
        raise ShapeError(
            f"line {lineno}: '{tag}' row has {len(parts)} values, expected {expect}"
        )
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ModelParseError(f"line {lineno}: bad float in '{tag}' row: {exc}") from None


def load_model(path):
    """Read a model file; returns ``(model, annealing_state_or_None)``.

    Raises :class:`ModelVersionError` on unknown magic/version,
    :class:`ShapeError` when declared shapes disagree with the payload,
    and :class:`ModelParseError` on truncation or malformed rows. No
    partial model is ever returned.
    """
    from .annealing import AnnealingState  # cycle-free: annealing does not import model

    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    lines = [ln.strip() for ln in raw if ln.strip()]
    if not lines:
        raise ModelParseError("empty model file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != MODEL_MAGIC:
        raise ModelVersionError(f"unrecognized model file magic: {lines[0]!r}")
    if header[1] != str(MODEL_VERSION):
        raise ModelVersionError(f"unsupported model format version {header[1]!r}")
    if len(lines) < 2:
        raise ModelParseError("model file truncated before shape line")
    shape = lines[1].split()
    if len(shape) != 4 or shape[0] != "k" or shape[2] != "dim":
        raise ModelParseError(f"malformed shape line: {lines[1]!r}")
    try:
        k, dim = int(shape[1]), int(shape[3])
    except ValueError:
        raise ModelParseError(f"non-integer shape in: {lines[1]!r}") from None
    if k < 1 or dim < 1:
        raise ShapeError(f"invalid declared shape k={k} dim={dim}")

    expected_body = 1 + 2 * k  # xi line + k mu rows + k d rows
    body = lines[2:]
    if len(body) < expected_body + 1:  # +1 for the end marker
        raise ModelParseError(
            f"model file truncated: {len(body)} body lines, expected {expected_body + 1}"
        )

    def split_line(idx, tag):
        ln = body[idx]
        if not ln.startswith(tag + " "):
            raise ModelParseError(
                f"line {idx + 3}: expected '{tag}' row, found {ln.split()[0]!r}"
            )
        return ln[len(tag) + 1 :]

    xi = _parse_float_row("xi", split_line(0, "xi"), k, 3)
    mu = [
        _parse_float_row("mu", split_line(1 + i, "mu"), dim, 4 + i) for i in range(k)
    ]
    d = [
        _parse_float_row("d", split_line(1 + k + i, "d"), dim, 4 + k + i)
        for i in range(k)
    ]

    state = None
    cursor = 1 + 2 * k
    if cursor < len(body) and body[cursor].startswith("anneal "):
        parts = body[cursor].split()
        if len(parts) != 8:
            raise ModelParseError("malformed anneal line")
        try:
            vals = [float(p) for p in parts[1:7]]
            iteration = int(parts[7])
        except ValueError:
            raise ModelParseError("malformed anneal line") from None
        state = AnnealingState(
            sigma=vals[0],
            eps=vals[1],
            ell=vals[2],
            ell_prev=vals[3],
            loss0=vals[4],
            alpha=vals[5],
            iteration=iteration,
        )
        cursor += 1
    if cursor >= len(body) or body[cursor] != "end":
        raise ModelParseError("model file truncated: missing end marker")

    model = GmmModel(
        k=k,
        dim=dim,
        xi=np.array(xi, dtype=np.float64),
        mu=np.array(mu, dtype=np.float64),
        d_diag=np.array(d, dtype=np.float64),
    )
    return model, state
