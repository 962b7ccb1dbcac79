"""Honest random forests (compiled kernel with a NumPy fallback)."""

from .forest import (
    PROBABILITY,
    REGRESSION,
    Forest,
    ForestParams,
    TreeNode,
    available_backends,
    best_split,
    cv_loss,
    cv_tune,
    default_backend,
    default_grid,
    fit_forest,
    predict,
)

__all__ = [
    "PROBABILITY",
    "REGRESSION",
    "Forest",
    "ForestParams",
    "TreeNode",
    "available_backends",
    "best_split",
    "cv_loss",
    "cv_tune",
    "default_backend",
    "default_grid",
    "fit_forest",
    "predict",
]
