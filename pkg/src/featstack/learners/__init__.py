"""Base regression estimators behind one fit/predict contract."""

from .base import DEFAULTS, KINDS, Dataset, FittedLearner, LearnerSpec, predict
from .linear import LinearModel, fit_lasso, fit_linear, lasso_path_max, soft_threshold
from .trees import (BoostedTrees, Ensemble, Tree, fit_ensemble, fit_gradient_boosting,
                    fit_tree)

__all__ = [
    "DEFAULTS", "KINDS", "Dataset", "FittedLearner", "LearnerSpec", "predict",
    "LinearModel", "fit_lasso", "fit_linear", "lasso_path_max", "soft_threshold",
    "BoostedTrees", "Ensemble", "Tree", "fit_ensemble", "fit_gradient_boosting", "fit_tree",
]
