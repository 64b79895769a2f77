"""Efficient influence functions for the target-population ATE ``tau``.

Every influence function here is affine in its estimand, so it is stored as
a pair of per-record arrays ``(U, W)`` with ``phi(theta) = U - W * theta``.
The one-step estimator is the average of ``U`` (``W`` averages to one when
``q`` is replaced by the sample fraction), and the plug-in variance is
``mean(phi(point)**2) / n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import DriftSpec, EstimateReport, SampleRecord, SettingSpec, StudyDataset, wald_interval
from .errors import BootstrapUnstableError, ContextIncompleteError, DataError, NumericalError
from .nuisance.crossfit import NuisanceSurface


@dataclass(frozen=True)
class EifContext:
    """Everything an influence function needs besides the observed data.

    Parameters
    ----------
    setting : SettingSpec
        Drift comes from the setting; Identity drift means an unstarred setting.
    nuisance : NuisanceSurface
    q_hat : float
        Sample fraction of source records.
    known_pi : bool
        Use the known-sampling-score variant, where ``1 - pi(x)`` replaces
        ``1 - g`` in the term carrying the conditional effect.
    """

    setting: SettingSpec
    nuisance: NuisanceSurface
    q_hat: float
    known_pi: bool = False

    @property
    def drift(self) -> DriftSpec:
        return self.setting.drift

    # composite scores -----------------------------------------------------

    def e_tilde(self) -> np.ndarray:
        """``P(A=1|X)`` when the target has no treated units: ``e1 * pi``."""
        return self.nuisance.e1 * self.nuisance.pi

    def e_pooled(self) -> np.ndarray:
        """``P(A=1|X)`` pooled over both datasets: ``e0 (1-pi) + e1 pi``."""
        nu = self.nuisance
        return self._e0() * (1 - nu.pi) + nu.e1 * nu.pi

    def ratios(self) -> tuple[np.ndarray, np.ndarray]:
        """Effective ratios ``r_a = m_a(mu_a)**2 * r_a°``."""
        nu, dr = self.nuisance, self.drift
        m0, m1 = dr.m0(nu.mu0), dr.m1(nu.mu1)
        return m0 * m0 * nu.r0, m1 * m1 * nu.r1

    def weighted_arms(self) -> tuple[np.ndarray, np.ndarray]:
        """``(omega_1, omega_0)``: arm probabilities after weighting target units by ``r_a``."""
        nu = self.nuisance
        r0, r1 = self.ratios()
        e0 = self._e0()
        w1 = nu.pi * nu.e1 + (1 - nu.pi) * e0 * r1
        w0 = nu.pi * (1 - nu.e1) + (1 - nu.pi) * (1 - e0) * r0
        return w1, w0

    def _e0(self) -> np.ndarray:
        if self.nuisance.e0 is None:
            raise ContextIncompleteError(f"setting {self.setting.label} needs e0, which the surface lacks")
        return self.nuisance.e0


def observed_columns(d: StudyDataset):
    """``(g, a, y)`` as floats with missing entries set to 0.

    Every term that touches a missing entry is multiplied by an indicator
    that is zero on that record, so the fill value never reaches a result.
    """
    return d.g.astype(float), d.a.filled(0.0).astype(float), d.y.filled(0.0).astype(float)


def _check(ctx: EifContext, d: StudyDataset):
    if ctx.nuisance.n != d.n:
        raise ContextIncompleteError(f"nuisance surface has {ctx.nuisance.n} records, data has {d.n}")
    st = ctx.setting.structure
    target = d.g == 0
    if ctx.setting.family in ("V", "VI") and (np.any(target & ~d.a_observed) or np.any(target & ~d.y_observed)):
        raise DataError(f"setting {ctx.setting.label} needs target treatment and outcome on every target record")
    return st


def tau_terms(ctx: EifContext, d: StudyDataset) -> tuple[np.ndarray, np.ndarray]:
    """``(U, W)`` for ``tau`` under ``ctx.setting``."""
    _check(ctx, d)
    return _tau_core(ctx, *observed_columns(d))


def _tau_core(ctx, G, A, Y):
    nu, dr = ctx.nuisance, ctx.drift
    q = ctx.q_hat
    pi, e1, mu0, mu1 = nu.pi, nu.e1, nu.mu0, nu.mu1
    cate = dr.psi1(mu1) - dr.psi0(mu0)
    W = (1 - pi) / (1 - q) if ctx.known_pi else (1 - G) / (1 - q)
    fam = ctx.setting.family

    if fam == "I":
        m1, m0 = dr.m1(mu1), dr.m0(mu0)
        resid = m1 * A * (Y - mu1) / e1 - m0 * (1 - A) * (Y - mu0) / (1 - e1)
        U = G / (1 - q) * resid * (1 - pi) / pi + W * cate
    elif not ctx.setting.starred:
        e = ctx.e_tilde() if fam == "V" else ctx.e_pooled()
        treated = (G * A if fam == "V" else A) * (Y - mu1) / e
        U = (1 - pi) / (1 - q) * (treated - (1 - A) * (Y - mu0) / (1 - e)) + W * cate
    else:
        m1, m0 = dr.m1(mu1), dr.m0(mu0)
        r0, r1 = ctx.ratios()
        src = G * (1 - pi) / (1 - q)
        tgt = (1 - G) * (1 - pi) / (1 - q)
        if fam == "V":
            w0 = pi * (1 - e1) + (1 - pi) * r0
            U = (src * m1 * A * (Y - mu1) / (pi * e1)
                 - src * m0 * (1 - A) * (Y - mu0) / w0
                 - tgt * r0 * (1 - A) * (Y - dr.psi0(mu0)) / w0
                 + W * cate)
        else:
            w1, w0 = ctx.weighted_arms()
            U = (src * (m1 * A * (Y - mu1) / w1 - m0 * (1 - A) * (Y - mu0) / w0)
                 + tgt * r1 * A * (Y - dr.psi1(mu1)) / w1
                 - tgt * r0 * (1 - A) * (Y - dr.psi0(mu0)) / w0
                 + W * cate)
    return U, W


def target_only_tau_terms(nu: NuisanceSurface, d: StudyDataset, q_hat: float):
    """``(U, W)`` of the influence function that uses the target data alone."""
    if nu.e0 is None:
        raise ContextIncompleteError("target-only influence function needs e0")
    G, A, Y = observed_columns(d)
    W = (1 - G) / (1 - q_hat)
    U = W * (A * (Y - nu.mu1) / nu.e0 - (1 - A) * (Y - nu.mu0) / (1 - nu.e0) + (nu.mu1 - nu.mu0))
    return U, W


def eif_tau(ctx: EifContext, d: StudyDataset, tau: float) -> np.ndarray:
    """Influence-function values at every record of ``d`` for a given ``tau``."""
    if not math.isfinite(tau):
        raise ValueError("tau must be finite")
    U, W = tau_terms(ctx, d)
    return U - W * tau


def record_columns(record: SampleRecord, setting: SettingSpec):
    """Length-one ``(g, a, y)`` arrays for a single record."""
    g = float(record.g)
    if g == 0 and setting.family in ("V", "VI") and (record.a is None or record.y is None):
        raise DataError(f"setting {setting.label} needs target treatment and outcome")
    a = 0.0 if record.a is None else float(record.a)
    y = 0.0 if record.y is None else float(record.y)
    return np.array([g]), np.array([a]), np.array([y])


def eif_tau_record(ctx: EifContext, record: SampleRecord, index: int, tau: float) -> float:
    """Influence function at one record; ``index`` picks its row of the nuisance surface."""
    one = replace(ctx, nuisance=ctx.nuisance.take([index]))
    U, W = _tau_core(one, *record_columns(record, ctx.setting))
    return float(U[0] - W[0] * tau)


# --------------------------------------------------------------------------
# estimation


def report_from_terms(U, W, estimand: str, setting: SettingSpec, nuisance: NuisanceSurface,
                      q_hat: float, z: float = 1.96, ratio_point: bool = False, extra: Optional[dict] = None):
    """Turn ``(U, W)`` into an :class:`EstimateReport`.

    The point is ``mean(U)`` (``mean(W)`` equals one by construction), or
    ``mean(U) / mean(W)`` when ``ratio_point`` is set.
    """
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    n = U.size
    point = float(np.mean(U) / np.mean(W)) if ratio_point else float(np.mean(U))
    phi = U - W * point
    if not np.all(np.isfinite(phi)):
        raise NumericalError("non-finite influence-function values")
    variance = float(np.mean(phi * phi) / n)
    lo, hi = wald_interval(point, variance, z)
    diagnostics = {
        "mean_centered_eif": float(np.mean(phi)),
        "clip_fraction": float(nuisance.clip_fraction),
        "nuisance_method": nuisance.method,
        "q_hat": float(q_hat),
        "q_source": "sample fraction",
    }
    if nuisance.notes:
        diagnostics["notes"] = list(nuisance.notes)
    if extra:
        diagnostics.update(extra)
    return EstimateReport(estimand, setting.label, point, variance, lo, hi, n, diagnostics)


def estimate_tau(d: StudyDataset, ctx: EifContext, z: float = 1.96) -> EstimateReport:
    """One-step estimate of ``tau`` with plug-in variance and Wald interval."""
    U, W = tau_terms(ctx, d)
    extra = {"known_pi": True} if ctx.known_pi else None
    return report_from_terms(U, W, "tau", ctx.setting, ctx.nuisance, ctx.q_hat, z, ratio_point=ctx.known_pi, extra=extra)


def bootstrap_ci(d: StudyDataset, recipe, B: int = 200, seed: int = 0, level: float = 0.95,
                 max_drop: float = 0.10) -> tuple[float, float]:
    """Percentile interval from ``B`` record resamples.

    ``recipe`` is any object with ``run(dataset) -> EstimateReport`` that
    refits nuisances (see :class:`fusion_ate.recipe.EstimationRecipe`).
    Resamples whose refit fails for lack of data are dropped.

    Raises
    ------
    BootstrapUnstableError
        When more than ``max_drop`` of the resamples fail.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    points = []
    dropped = 0
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        idx = rng.integers(0, d.n, d.n)
        try:
            points.append(recipe.run(d.take(idx)).point)
        except (NumericalError, DataError):
            dropped += 1
    if dropped > max_drop * B:
        raise BootstrapUnstableError(f"{dropped} of {B} bootstrap resamples failed")
    alpha = 1 - level
    lo, hi = np.quantile(np.asarray(points), [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)
