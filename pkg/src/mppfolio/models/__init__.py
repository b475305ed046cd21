"""Return and volatility forecasters built from scratch."""

from .elastic_net import ElasticNetModel, fit_elastic_net, lambda_grid, predict_elastic_net
from .forest import (
    RandomForestModel,
    RegressionTree,
    fit_random_forest,
    fit_regression_tree,
    predict_random_forest,
    predict_tree,
)
from .registry import FAMILIES, Forecaster, ModelSpec, Standardizer, expand_grid, fit_model
from .svr import SvrFitError, SvrModel, fit_svr, predict_svr, rbf_kernel
from .validation import ValidationResult, grid_validate

__all__ = [
    "FAMILIES",
    "ElasticNetModel",
    "Forecaster",
    "ModelSpec",
    "RandomForestModel",
    "RegressionTree",
    "Standardizer",
    "SvrFitError",
    "SvrModel",
    "ValidationResult",
    "expand_grid",
    "fit_elastic_net",
    "fit_model",
    "fit_random_forest",
    "fit_regression_tree",
    "fit_svr",
    "grid_validate",
    "lambda_grid",
    "predict_elastic_net",
    "predict_random_forest",
    "predict_svr",
    "predict_tree",
    "rbf_kernel",
]
