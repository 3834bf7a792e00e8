"""Label distribution learning for multi-label data.

Labels become diagonal Gaussians whose KL geometry mirrors an asymmetric
label-transfer matrix; a ridge map sends features into that space and a
nearest-neighbor decoder turns predicted points back into label scores.
"""

from .dataset import Dataset, load_dataset, parse_sparse_dataset
from .pipeline import FittedModel, RunConfig, cross_validate, evaluate_model, fit, predict_scores

__all__ = [
    "Dataset",
    "FittedModel",
    "RunConfig",
    "cross_validate",
    "evaluate_model",
    "fit",
    "load_dataset",
    "parse_sparse_dataset",
    "predict_scores",
]
__version__ = "0.1.0"
