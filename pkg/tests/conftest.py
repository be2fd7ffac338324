"""Shared fixtures and independent oracle implementations.

The oracles here deliberately avoid the package's own computation
paths: densities go through mpmath or scipy.stats, distances through
explicit double loops, EM through a from-scratch batch implementation.
Expected values asserted in the tests were produced by these oracles.
"""

import mpmath as mp
import numpy as np
import pytest

import gmmstream as gs

mp.mp.dps = 50


# ---------------------------------------------------------------------------
# high-precision density oracles


def oracle_log_component_score(pi, mu, d, x):
    """log(pi * N(x; mu, diag(1/d^2))) via the textbook density in mpmath."""
    dim = len(mu)
    det_cov = mp.mpf(1)
    for di in d:
        det_cov /= mp.mpf(di) ** 2
    quad = sum(
        (mp.mpf(di) ** 2) * (mp.mpf(xi) - mp.mpf(mi)) ** 2
        for di, mi, xi in zip(d, mu, x)
    )
    dens = (
        (2 * mp.pi) ** (-mp.mpf(dim) / 2)
        * det_cov ** (-mp.mpf(1) / 2)
        * mp.e ** (-quad / 2)
    )
    return mp.log(mp.mpf(pi) * dens)


def oracle_log_scores(model, x):
    """Per-component scores of a model at x, through the mpmath oracle."""
    pis = oracle_softmax(model.xi)
    return [
        oracle_log_component_score(pis[k], model.mu[k], model.d_diag[k], x)
        for k in range(model.k)
    ]


def oracle_softmax(xs):
    es = [mp.e ** mp.mpf(float(x)) for x in xs]
    s = sum(es)
    return [e / s for e in es]


def oracle_logsumexp(values):
    return mp.log(sum(mp.e ** v for v in values))


# ---------------------------------------------------------------------------
# brute-force grid smoothing oracle


def oracle_periodic_sq_dist(a, b, side):
    ar, ac = divmod(a, side)
    br, bc = divmod(b, side)
    dr = min(abs(ar - br), side - abs(ar - br))
    dc = min(abs(ac - bc), side - abs(ac - bc))
    return dr * dr + dc * dc


def oracle_filter_bank(k, sigma):
    """Filter rows by direct enumeration of periodic grid distances."""
    side = int(round(k**0.5))
    g = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            r2 = oracle_periodic_sq_dist(a, b, side)
            g[a, b] = np.exp(-r2 / (2.0 * sigma**2))
        g[a] /= g[a].sum()
    return g


def oracle_smoothed_loss(scores, k, sigma):
    """max_k sum_j g_kj s_j per sample, averaged; double loop, no matmul."""
    g = oracle_filter_bank(k, sigma)
    scores = np.atleast_2d(scores)
    vals = []
    for row in scores:
        sums = [sum(g[a, b] * row[b] for b in range(k)) for a in range(k)]
        vals.append(max(sums))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_gradients(model, X, bank, h=1e-5):
    """Central finite differences of annealed_loss for every parameter."""

    def loss_of(m):
        return gs.annealed_loss(m, X, bank)

    g_xi = np.zeros_like(model.xi)
    g_mu = np.zeros_like(model.mu)
    g_d = np.zeros_like(model.d_diag)
    for i in range(model.k):
        for arr, grad, idx in ((model.xi, g_xi, (i,)),):
            m_p, m_m = model.copy(), model.copy()
            m_p.xi[i] += h
            m_m.xi[i] -= h
            grad[idx] = (loss_of(m_p) - loss_of(m_m)) / (2 * h)
        for j in range(model.dim):
            m_p, m_m = model.copy(), model.copy()
            m_p.mu[i, j] += h
            m_m.mu[i, j] -= h
            g_mu[i, j] = (loss_of(m_p) - loss_of(m_m)) / (2 * h)
            m_p, m_m = model.copy(), model.copy()
            m_p.d_diag[i, j] += h
            m_m.d_diag[i, j] -= h
            g_d[i, j] = (loss_of(m_p) - loss_of(m_m)) / (2 * h)
    return g_xi, g_mu, g_d


def max_relative_error(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale))


# ---------------------------------------------------------------------------
# classical EM oracle (independent of the package's E/M code)


def classical_em_step(weights, means, variances, X, var_floor):
    """One batch EM step with diagonal covariances via scipy densities."""
    from scipy.stats import multivariate_normal

    K = len(weights)
    dens = np.stack(
        [
            weights[k]
            * multivariate_normal.pdf(X, mean=means[k], cov=np.diag(variances[k]))
            for k in range(K)
        ],
        axis=1,
    )
    dens = np.atleast_2d(dens)
    gamma = dens / dens.sum(axis=1, keepdims=True)
    nk = gamma.sum(axis=0)
    w = nk / nk.sum()
    mu = (gamma.T @ X) / nk[:, None]
    var = (gamma.T @ X**2) / nk[:, None] - mu**2
    var = np.maximum(var, var_floor)
    return w, mu, var


def classical_em_loglik(weights, means, variances, X):
    from scipy.stats import multivariate_normal

    K = len(weights)
    dens = np.stack(
        [
            weights[k]
            * multivariate_normal.pdf(X, mean=means[k], cov=np.diag(variances[k]))
            for k in range(K)
        ],
        axis=1,
    )
    return float(np.mean(np.log(np.atleast_2d(dens).sum(axis=1))))


# ---------------------------------------------------------------------------
# brute-force metric oracles


def oracle_davies_bouldin(X, labels, centroids):
    live = sorted(set(labels.tolist()))
    spreads = {}
    for c in live:
        members = X[labels == c]
        spreads[c] = np.mean([np.linalg.norm(m - centroids[c]) for m in members])
    total = 0.0
    for i in live:
        best = -np.inf
        for j in live:
            if j == i:
                continue
            r = (spreads[i] + spreads[j]) / np.linalg.norm(centroids[i] - centroids[j])
            best = max(best, r)
        total += best
    return total / len(live)


def oracle_dunn(X, labels):
    live = sorted(set(labels.tolist()))
    groups = {c: X[labels == c] for c in live}
    min_gap = np.inf
    for i in live:
        for j in live:
            if j <= i:
                continue
            for a in groups[i]:
                for b in groups[j]:
                    min_gap = min(min_gap, np.linalg.norm(a - b))
    max_diam = 0.0
    for c in live:
        g = groups[c]
        for a in range(len(g)):
            for b in range(a + 1, len(g)):
                max_diam = max(max_diam, np.linalg.norm(g[a] - g[b]))
    return min_gap / max_diam


def oracle_generating_max_component(spec, X):
    """Max-component likelihood of generating parameters, direct formula."""
    logw = np.log(spec.weights)
    scores = np.stack(
        [
            logw[c]
            - 0.5 * np.sum(np.log(2 * np.pi * spec.variances[c]))
            - 0.5 * np.sum((X - spec.means[c]) ** 2 / spec.variances[c], axis=1)
            for c in range(spec.n_components)
        ],
        axis=1,
    )
    return float(scores.max(axis=1).mean())


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture
def tiny_model():
    """k=4, dim=3 model with hand-set, well-conditioned parameters."""
    rng = np.random.default_rng(42)
    return gs.GmmModel(
        k=4,
        dim=3,
        xi=rng.normal(size=4),
        mu=rng.uniform(0, 1, size=(4, 3)),
        d_diag=rng.uniform(0.5, 5.0, size=(4, 3)),
    )


def random_model(rng, k, dim, d_lo=0.5, d_hi=5.0):
    return gs.GmmModel(
        k=k,
        dim=dim,
        xi=rng.normal(size=k),
        mu=rng.uniform(0, 1, size=(k, dim)),
        d_diag=rng.uniform(d_lo, d_hi, size=(k, dim)),
    )
