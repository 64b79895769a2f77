"""Target-population average treatment effects from a source and a target dataset.

The main entry points are :class:`StudyDataset` (the fused data),
:func:`cross_fit` (nuisance surfaces) and :func:`estimate` (one-step
estimates with plug-in variances) for the six data structures, with or
without posterior drift.
"""
__version__ = "0.1.0"

from .data import (
    CsvSchema,
    DriftSpec,
    EstimateReport,
    SampleRecord,
    SettingSpec,
    Structure,
    StudyDataset,
    load_csv,
    parse_setting,
    save_csv,
    validate_dataset,
)
from .eif import EifContext, bootstrap_ci, eif_tau, estimate_tau
from .estimands import ESTIMANDS, ExtEifContext
from .nuisance import NuisanceSurface, cross_fit, fit_variance_ratio
from .recipe import EstimationRecipe, estimate
from .sensitivity import SweepResult, epsilon_range, sensitivity_sweep

__all__ = [
    "__version__", "CsvSchema", "DriftSpec", "EstimateReport", "SampleRecord", "SettingSpec", "Structure",
    "StudyDataset", "load_csv", "parse_setting", "save_csv", "validate_dataset", "EifContext", "bootstrap_ci",
    "eif_tau", "estimate_tau", "ESTIMANDS", "ExtEifContext", "NuisanceSurface", "cross_fit",
    "fit_variance_ratio", "EstimationRecipe", "estimate", "SweepResult", "epsilon_range", "sensitivity_sweep",
]
