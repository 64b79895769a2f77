"""Sensitivity analysis over linear posterior-drift functions.

A linear drift ``psi_a(u) = eps_a * u`` says the target conditional mean of
``Y(a)`` is ``eps_a`` times the source one. :func:`sensitivity_sweep` refits
nothing across a grid of ``(eps0, eps1)``; it reuses one nuisance surface and
only swaps the :class:`~fusion_ate.data.DriftSpec`. :func:`epsilon_range`
suggests a grid from the data.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import DriftSpec, SettingSpec, StudyDataset, Structure, parse_setting, require_valid
from .errors import RangeUnavailableError
from .nuisance.crossfit import NuisanceSurface, _fit_regression, cross_fit
from .nuisance.forest import ForestParams
from .recipe import estimate


@dataclass
class SweepResult:
    """Estimates over a drift grid.

    Attributes
    ----------
    grid : list of (eps0, eps1)
        Sorted lexicographically.
    reports : dict
        ``(eps0, eps1)`` to a dict of setting label (unstarred roman numeral)
        to :class:`EstimateReport`.
    eps_range : (lo, hi) or None
    nuisance_checksum : str
        Checksum of the single surface every grid point used.
    """

    grid: list
    reports: dict
    eps_range: Optional[tuple] = None
    nuisance_checksum: str = ""
    settings: list = field(default_factory=list)

    def rows(self):
        """Tidy rows ``(eps0, eps1, setting, point, ci_low, ci_high)``."""
        for pt in self.grid:
            for label in self.settings:
                r = self.reports[pt][label]
                yield {"eps0": pt[0], "eps1": pt[1], "setting": label,
                       "point": r.point, "ci_low": r.ci_low, "ci_high": r.ci_high}

    def points(self, setting: str) -> np.ndarray:
        return np.array([self.reports[pt][setting].point for pt in self.grid])


def _round_out(lo: float, hi: float, step: float) -> tuple[float, float]:
    # the small slack keeps values already on the lattice from moving a full step
    lo_r = math.floor(lo / step + 1e-9) * step
    hi_r = math.ceil(hi / step - 1e-9) * step
    return round(lo_r, 10), round(hi_r, 10)


def epsilon_range(d: StudyDataset, method: str = "parametric", seed: int = 0, n_se: float = 2.0,
                  step: Optional[float] = 0.05, forest_params: Optional[ForestParams] = None) -> tuple[float, float]:
    """Empirical range for the control-arm drift ``eps``.

    The control mean is fitted separately on target controls and on source
    controls. Both fits are evaluated at the target controls' covariates and
    the target fit is regressed on the source fit through the origin. The
    range is ``slope +/- n_se`` heteroskedasticity-robust (HC1) standard
    errors, computed from the observed-outcome residuals ``y - slope * f_src``.
    The band is widened outward to multiples of ``step`` (pass ``step=None``
    to skip rounding).

    Raises
    ------
    RangeUnavailableError
        If no target control has an observed outcome.
    """
    params = forest_params or ForestParams()
    a = d.a.data
    ctrl = d.a_observed & d.y_observed & (a == 0)
    tgt_rows = np.flatnonzero(ctrl & (d.g == 0))
    src_rows = np.flatnonzero(ctrl & (d.g == 1))
    if tgt_rows.size == 0:
        raise RangeUnavailableError("no target controls with an observed outcome")
    if src_rows.size == 0:
        raise RangeUnavailableError("no source controls")
    if tgt_rows.size < d.p + 2:
        raise RangeUnavailableError(f"only {tgt_rows.size} target controls")
    z = d.x[tgt_rows]
    y = d.y.data[tgt_rows]
    f_tgt = _fit_regression(method, d.x[tgt_rows], y, seed, params)(z)
    f_src = _fit_regression(method, d.x[src_rows], d.y.data[src_rows], seed + 1, params)(z)
    sxx = float(f_src @ f_src)
    if sxx <= 0:
        raise RangeUnavailableError("source control fit is identically zero")
    slope = float(f_src @ f_tgt) / sxx
    # sandwich with the observed outcomes: fitted-on-fitted residuals would
    # ignore the noise in the target fit and give a far too narrow band
    resid = y - slope * f_src
    m = f_src.size
    hc1 = m / max(m - 1, 1) * float(np.sum(f_src**2 * resid**2)) / sxx**2
    se = math.sqrt(hc1)
    lo, hi = slope - n_se * se, slope + n_se * se
    if step:
        lo, hi = _round_out(lo, hi, step)
    return lo, hi


def epsilon_grid(lo: float, hi: float, step: float = 0.05, tied: bool = True) -> list:
    """Evenly spaced grid over ``[lo, hi]``; untied grids take the product."""
    count = int(round((hi - lo) / step)) + 1
    values = [round(lo + i * step, 10) for i in range(count)]
    if tied:
        return [(v, v) for v in values]
    return [(v0, v1) for v0 in values for v1 in values]


_RICHNESS = {
    Structure.X_ONLY: 0, Structure.XA: 1, Structure.XY: 1, Structure.XAY: 2,
    Structure.XAY_CONTROLS_ONLY: 3, Structure.XAY_UNCONFOUNDED: 4,
}


def _fit_structure(settings: Sequence[SettingSpec]) -> Structure:
    return max((s.structure for s in settings), key=_RICHNESS.__getitem__)


def sensitivity_sweep(d: StudyDataset, base_setting, grid, method: str = "parametric", seed: int = 0,
                      settings: Optional[Sequence] = None, estimand: str = "tau", k: int = 4,
                      forest_params: Optional[ForestParams] = None, nuisance: Optional[NuisanceSurface] = None,
                      eps_range: Optional[tuple] = None, workers: int = 1, z: float = 1.96) -> SweepResult:
    """Estimate under linear drift at every grid point.

    Parameters
    ----------
    base_setting : str or SettingSpec
        The data structure (any drift it carries is ignored).
    grid : sequence of float or (eps0, eps1)
        Scalars mean ``eps0 = eps1``.
    settings : sequence, optional
        Extra structures to report alongside ``base_setting``.
    nuisance : NuisanceSurface, optional
        Reuse a fitted surface; otherwise one is fitted with variance ratios.
    """
    grid = sorted({(float(g), float(g)) if np.ndim(g) == 0 else (float(g[0]), float(g[1])) for g in grid})
    if not grid:
        raise ValueError("grid must not be empty")
    labels = [base_setting] + list(settings or [])
    specs = []
    for lab in labels:
        s = parse_setting(lab.rstrip("*")) if isinstance(lab, str) else SettingSpec(lab.structure)
        if s not in specs:
            specs.append(s)
    for s in specs:
        require_valid(d, s)

    if nuisance is None:
        fit_setting = SettingSpec(_fit_structure(specs), DriftSpec.linear(*grid[0]))
        nuisance = cross_fit(d, fit_setting, method=method, k=k, seed=seed, ratios=True,
                             forest_params=forest_params)
    surfaces = {}
    for s in specs:
        if s.structure is Structure.XAY_CONTROLS_ONLY and nuisance.e0 is not None:
            surfaces[s.roman] = nuisance.replace(e0=np.zeros(nuisance.n))
        else:
            surfaces[s.roman] = nuisance

    def run(pt):
        drift = DriftSpec.linear(*pt)
        out = {}
        for s in specs:
            out[s.roman] = estimate(d, s.with_drift(drift), surfaces[s.roman], estimand, z=z)
        return pt, out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(pt) for pt in grid]
    return SweepResult(grid, dict(results), eps_range, nuisance.checksum(), [s.roman for s in specs])
