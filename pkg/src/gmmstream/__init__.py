"""Streaming-data Gaussian mixture training toolkit.

Core pieces: a numerically stable SGD trainer for diagonal-precision
GMMs (max-component objective smoothed over a periodic component grid,
with automatic annealing of the smoothing radius and learning rate), a
stochastic-EM reference trainer, IDX/CSV/synthetic data streams,
cluster validity metrics and a reproducible experiment CLI.
"""

from .annealing import (
    AnnealingState,
    FilterBank,
    build_filters,
    check_and_anneal,
    update_sliding_loss,
)
from .data import (
    ArrayStream,
    SampleStream,
    SyntheticSpec,
    class_filter,
    load_csv,
    load_idx,
    synthetic_stream,
)
from .likelihood import (
    ComponentScores,
    GradientSet,
    annealed_gradients,
    annealed_loss,
    component_log_scores,
    full_log_likelihood,
    max_component_loss,
    responsibilities,
)
from .metrics import ClusterAssignment, assign, davies_bouldin, dunn_index
from .model import (
    GmmModel,
    TrainConfig,
    enforce_constraints,
    init_model,
    load_model,
    save_model,
    weights,
)
from .sem import (
    SemConfig,
    SufficientStats,
    minibatch_kmeans,
    sem_grid_search,
    sem_step_size,
    sem_train,
)
from .sgd import EvalSummary, TrainReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AnnealingState",
    "ArrayStream",
    "ClusterAssignment",
    "ComponentScores",
    "EvalSummary",
    "FilterBank",
    "GmmModel",
    "GradientSet",
    "SampleStream",
    "SemConfig",
    "SufficientStats",
    "SyntheticSpec",
    "TrainConfig",
    "TrainReport",
    "annealed_gradients",
    "annealed_loss",
    "assign",
    "build_filters",
    "check_and_anneal",
    "class_filter",
    "component_log_scores",
    "davies_bouldin",
    "dunn_index",
    "enforce_constraints",
    "evaluate",
    "full_log_likelihood",
    "init_model",
    "load_csv",
    "load_idx",
    "load_model",
    "max_component_loss",
    "minibatch_kmeans",
    "responsibilities",
    "save_model",
    "sem_grid_search",
    "sem_step_size",
    "sem_train",
    "synthetic_stream",
    "train",
    "update_sliding_loss",
    "weights",
]
