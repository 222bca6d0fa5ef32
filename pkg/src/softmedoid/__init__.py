"""Robust aggregation for graph neural networks via the soft medoid family."""

__version__ = "0.1.0"

from .aggregate import AggregatorConfig
from .estimators import (
    EXACT_MEDOID,
    EstimatorResult,
    dimensionwise_median,
    l1_estimator,
    mean,
    medoid,
    soft_medoid,
    weighted_soft_medoid,
    weighted_soft_medoid_alt,
    weighted_soft_medoid_topk,
    wsm_backward,
)
from .gnn import GnnModel, TrainConfig, init_model, train
from .graph import SparseGraph, SplitAssignment, load_graph, synth_sbm
from .smoothing import SmoothingConfig, VoteRecord

__all__ = [
    "AggregatorConfig",
    "EXACT_MEDOID",
    "EstimatorResult",
    "GnnModel",
    "SmoothingConfig",
    "SparseGraph",
    "SplitAssignment",
    "TrainConfig",
    "VoteRecord",
    "dimensionwise_median",
    "init_model",
    "l1_estimator",
    "load_graph",
    "mean",
    "medoid",
    "soft_medoid",
    "synth_sbm",
    "train",
    "weighted_soft_medoid",
    "weighted_soft_medoid_alt",
    "weighted_soft_medoid_topk",
    "wsm_backward",
    "__version__",
]
