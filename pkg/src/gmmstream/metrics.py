"""Cluster validity indices over hard component assignments.

Assignments use the same best-matching rule as the max-component loss:
each sample belongs to the component with the largest log score.
Starved components simply end up with no members and are excluded from
the Davies-Bouldin average; the Dunn index uses the classical form
(single-linkage separation over complete-diameter compactness) with an
optional seeded subsample to keep the pairwise work bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import MetricUndefinedError, ShapeError
from .likelihood import log_score_matrix
from .model import GmmModel

DUNN_SUBSAMPLE_CAP = 2000


@dataclass
class ClusterAssignment:
    """Hard labels plus the set of components that received members."""

    labels: np.ndarray
    nonempty: np.ndarray  # sorted component indices with >= 1 member

    @property
    def n_clusters(self) -> int:
        return int(self.nonempty.shape[0])


def assign(model: GmmModel, dataset) -> ClusterAssignment:
    """Map every sample to its best-matching component."""
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ShapeError(f"dataset shape {X.shape} does not match model dim {model.dim}")
    labels = np.empty(X.shape[0], dtype=np.int64)
    step = 4096
    for lo in range(0, X.shape[0], step):
        chunk = X[lo : lo + step]
        labels[lo : lo + chunk.shape[0]] = log_score_matrix(model, chunk).argmax(axis=1)
    return ClusterAssignment(labels=labels, nonempty=np.unique(labels))


def davies_bouldin(dataset, assignment: ClusterAssignment, centroids) -> float:
    """Davies-Bouldin score over nonempty clusters; lower is better.

    S_i is the mean Euclidean distance of cluster i's members to its
    centroid, M_ij the distance between centroids, and the score
    averages max_j (S_i + S_j) / M_ij.
    """
    X = np.asarray(dataset, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    live = assignment.nonempty
    if live.shape[0] < 2:
        raise MetricUndefinedError(
            f"Davies-Bouldin needs at least 2 nonempty clusters, found {live.shape[0]}"
        )
    mu = centroids[live]
    spread = np.empty(live.shape[0])
    for idx, c in enumerate(live):
        members = X[assignment.labels == c]
        spread[idx] = np.linalg.norm(members - mu[idx], axis=1).mean()
    gaps = cdist(mu, mu)
    np.fill_diagonal(gaps, np.inf)
    ratios = (spread[:, None] + spread[None, :]) / gaps
    np.fill_diagonal(ratios, -np.inf)
    return float(ratios.max(axis=1).mean())


def dunn_index(dataset, assignment: ClusterAssignment, cap=DUNN_SUBSAMPLE_CAP, seed=0) -> float:
    """Dunn index; higher is better.

    min over cluster pairs of the smallest inter-cluster point distance,
    divided by the largest cluster diameter. When the dataset exceeds
    ``cap`` points a seeded uniform subsample that size is scored
    instead (pass ``cap=None`` to force the exact computation).
    """
    X = np.asarray(dataset, dtype=np.float64)
    labels = assignment.labels
    if cap is not None and X.shape[0] > cap:
        pick = np.random.default_rng(seed).choice(X.shape[0], size=cap, replace=False)
        X, labels = X[pick], labels[pick]
    live = np.unique(labels)
    if live.shape[0] < 2:
        raise MetricUndefinedError(
            f"Dunn index needs at least 2 nonempty clusters, found {live.shape[0]}"
        )
    groups = [X[labels == c] for c in live]
    max_diameter = 0.0
    for g in groups:
        if g.shape[0] > 1:
            max_diameter = max(max_diameter, float(pdist(g).max()))
    if max_diameter == 0.0:
        raise MetricUndefinedError("all clusters are point-like; Dunn index undefined")
    min_gap = np.inf
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            min_gap = min(min_gap, float(cdist(groups[i], groups[j]).min()))
    return float(min_gap / max_diameter)
