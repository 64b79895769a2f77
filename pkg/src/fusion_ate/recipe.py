"""A reusable description of "fit nuisances, then estimate"."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .data import EstimateReport, SettingSpec, StudyDataset, require_valid
from .eif import estimate_tau
from .estimands import ExtEifContext, estimate_beta, estimate_beta_att, estimate_tau_att
from .nuisance.crossfit import NuisanceSurface, cross_fit
from .nuisance.forest import ForestParams


def estimate(d: StudyDataset, setting: SettingSpec, nuisance: NuisanceSurface, estimand: str = "tau",
             known_pi: bool = False, z: float = 1.96) -> EstimateReport:
    """Estimate one estimand from a fitted surface."""
    ctx = ExtEifContext.from_data(setting, nuisance, d, known_pi=known_pi)
    if estimand == "tau":
        return estimate_tau(d, ctx, z)
    if estimand == "beta":
        return estimate_beta(d, ctx, z)
    if estimand == "tau_att":
        return estimate_tau_att(d, ctx, z)
    if estimand == "beta_att":
        return estimate_beta_att(d, ctx, z)
    raise ValueError(f"unknown estimand {estimand!r}")


@dataclass(frozen=True)
class EstimationRecipe:
    """Nuisance-fitting options plus the estimand and setting to report."""

    setting: SettingSpec
    estimand: str = "tau"
    method: str = "parametric"
    k: int = 4
    seed: int = 0
    delta: float = 0.01
    crossfit: Optional[bool] = None
    pooled_mu: bool = False
    known_pi: bool = False
    ratios: Optional[bool] = None
    forest_params: ForestParams = field(default_factory=ForestParams)
    z: float = 1.96

    def fit(self, d: StudyDataset, setting: Optional[SettingSpec] = None, seed: Optional[int] = None) -> NuisanceSurface:
        s = setting or self.setting
        return cross_fit(d, s, method=self.method, k=self.k, seed=self.seed if seed is None else seed,
                         delta=self.delta, crossfit=self.crossfit, pooled_mu=self.pooled_mu,
                         ratios=self.ratios, forest_params=self.forest_params)

    def run(self, d: StudyDataset, seed: Optional[int] = None) -> EstimateReport:
        require_valid(d, self.setting)
        nu = self.fit(d, seed=seed)
        return estimate(d, self.setting, nu, self.estimand, self.known_pi, self.z)
