"""Unsupervised co-selection of features and instances from multi-view data."""

from .dataset import (
    DatasetError,
    Hyperparams,
    MultiViewDataset,
    load_dataset,
    normalize_views,
    save_dataset,
    synthesize,
)
from .evaluation import EvalReport, evaluate, ratio_sweep
from .graph import knn_graph, newton_simplex_root, project_row, update_consensus_graph
from .selection import SelectionResult, mvis_scores, select
from .solver import ConvergenceTrace, ModelState, SolverError, fit, fit_variant, objective

__version__ = "0.1.0"

__all__ = [
    "ConvergenceTrace", "DatasetError", "EvalReport", "Hyperparams", "ModelState",
    "MultiViewDataset", "SelectionResult", "SolverError", "evaluate", "fit", "fit_variant",
    "knn_graph", "load_dataset", "mvis_scores", "newton_simplex_root", "normalize_views",
    "objective", "project_row", "ratio_sweep", "save_dataset", "select", "synthesize",
    "update_consensus_graph",
]
