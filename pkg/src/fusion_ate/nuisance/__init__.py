"""Nuisance learners and cross-fitting."""
from .crossfit import (
    NuisanceSurface,
    cross_fit,
    fit_variance_ratio,
    load_nuisance_csv,
    save_nuisance_csv,
)
from .forest import ForestModelFit, ForestParams, fit_forest, oob_predict
from .models import LinearModelFit, LogisticModelFit, fit_linear, fit_logistic, logistic_score, with_intercept

__all__ = [
    "NuisanceSurface", "cross_fit", "fit_variance_ratio", "load_nuisance_csv", "save_nuisance_csv",
    "ForestModelFit", "ForestParams", "fit_forest", "oob_predict",
    "LinearModelFit", "LogisticModelFit", "fit_linear", "fit_logistic", "logistic_score", "with_intercept",
]
