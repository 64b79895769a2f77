"""Influence functions for the source-population ATE and both ATT estimands.

Same ``(U, W)`` convention as :mod:`fusion_ate.eif`: ``phi = U - W * theta``.

* ``beta``: ATE over the source population, defined for all twelve settings.
* ``tau_att``: ATT over the target population, needs target treatment and
  is not identified under structures without it or with controls only.
* ``beta_att``: ATT over the source population.

The ATT forms are available for unstarred settings only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SettingSpec, StudyDataset, Structure
from .eif import EifContext, _check, observed_columns, report_from_terms
from .errors import NotIdentifiableError
from .nuisance.crossfit import NuisanceSurface

ESTIMANDS = ("tau", "beta", "tau_att", "beta_att")


@dataclass(frozen=True)
class ExtEifContext(EifContext):
    """:class:`EifContext` plus the marginal treated fractions in each group.

    ``e0_bar`` is the share of treated units among target records, ``e1_bar``
    the share among source records. Either is ``None`` when unavailable.
    """

    e0_bar: float | None = None
    e1_bar: float | None = None

    @classmethod
    def from_data(cls, setting: SettingSpec, nuisance: NuisanceSurface, d: StudyDataset, known_pi: bool = False):
        src = d.g == 1
        tgt = (d.g == 0) & d.a_observed
        e1_bar = float(np.mean(d.a.data[src]))
        e0_bar = float(np.mean(d.a.data[tgt])) if np.count_nonzero(tgt) and setting.structure.needs_target_a else None
        return cls(setting, nuisance, d.q_hat, known_pi, e0_bar, e1_bar)


# --------------------------------------------------------------------------
# beta


def beta_terms(ctx: EifContext, d: StudyDataset):
    """``(U, W)`` for the source-population ATE."""
    _check(ctx, d)
    G, A, Y = observed_columns(d)
    nu, dr = ctx.nuisance, ctx.drift
    q = ctx.q_hat
    pi, e1, mu0, mu1 = nu.pi, nu.e1, nu.mu0, nu.mu1
    cate = mu1 - mu0
    W = G / q
    fam = ctx.setting.family
    if fam == "I":
        U = G / q * (A * (Y - mu1) / e1 - (1 - A) * (Y - mu0) / (1 - e1) + cate)
    elif not ctx.setting.starred:
        if fam == "V":
            U = G / q * (A * (Y - mu1) / e1 + cate) - (1 / q) * (1 - A) * (Y - mu0) * pi / (1 - pi * e1)
        else:
            e = ctx.e_pooled()
            U = (1 / q) * (A * (Y - mu1) * pi / e - (1 - A) * (Y - mu0) * pi / (1 - e)) + G / q * cate
    else:
        m0, m1 = dr.m0(mu0), dr.m1(mu1)
        # r_a / m_a, written as m_a * r_a° so that m_a = 0 stays finite
        s0, s1 = m0 * nu.r0, m1 * nu.r1
        src = G * pi / q
        tgt = (1 - G) * pi / q
        if fam == "V":
            r0 = m0 * m0 * nu.r0
            w1 = pi * e1
            w0 = pi * (1 - e1) + (1 - pi) * r0
            U = (src * (A * (Y - mu1) / w1 - (1 - A) * (Y - mu0) / w0)
                 - tgt * (1 - A) * (Y - dr.psi0(mu0)) * s0 / w0
                 + G / q * cate)
        else:
            w1, w0 = ctx.weighted_arms()
            U = (src * (A * (Y - mu1) / w1 - (1 - A) * (Y - mu0) / w0)
                 + tgt * (A * (Y - dr.psi1(mu1)) * s1 / w1 - (1 - A) * (Y - dr.psi0(mu0)) * s0 / w0)
                 + G / q * cate)
    return U, W


def eif_beta(ctx: EifContext, d: StudyDataset, beta: float) -> np.ndarray:
    U, W = beta_terms(ctx, d)
    return U - W * beta


def estimate_beta(d: StudyDataset, ctx: EifContext, z: float = 1.96):
    U, W = beta_terms(ctx, d)
    return report_from_terms(U, W, "beta", ctx.setting, ctx.nuisance, ctx.q_hat, z)


# --------------------------------------------------------------------------
# ATT


def _unstarred(ctx, name):
    if ctx.setting.starred:
        raise NotIdentifiableError(f"{name} influence functions are implemented for unstarred settings only")


_TAU_ATT_STRUCTURES = (Structure.XA, Structure.XAY, Structure.XAY_UNCONFOUNDED)


def tau_att_terms(ctx: ExtEifContext, d: StudyDataset):
    """``(U, W)`` for the target-population ATT (settings II, IV, VI)."""
    if ctx.setting.structure not in _TAU_ATT_STRUCTURES:
        raise NotIdentifiableError(f"tau_att is not identifiable under setting {ctx.setting.label}")
    _unstarred(ctx, "tau_att")
    _check(ctx, d)
    e0_bar = ctx.e0_bar
    if e0_bar is None or not 0 < e0_bar < 1:
        raise NotIdentifiableError("tau_att needs treated and control units in the target data")
    G, A, Y = observed_columns(d)
    nu = ctx.nuisance
    q = ctx.q_hat
    pi, e1, mu0, mu1 = nu.pi, nu.e1, nu.mu0, nu.mu1
    e0 = ctx._e0()
    cate = mu1 - mu0
    W = (1 - G) * A / ((1 - q) * e0_bar)
    if ctx.setting.family == "VI":
        e = ctx.e_pooled()
        U = (1 - pi) * e0 / ((1 - q) * e0_bar) * (A * (Y - mu1) / e - (1 - A) * (Y - mu0) / (1 - e)) + W * cate
    else:
        resid = A * (Y - mu1) / e1 - (1 - A) * (Y - mu0) / (1 - e1)
        U = G / ((1 - q) * e0_bar) * resid * (1 - pi) * e0 / pi + W * cate
    return U, W


def target_only_att_terms(ctx: ExtEifContext, d: StudyDataset):
    """``(U, W)`` of the target-data-only influence function of ``tau_att``."""
    G, A, Y = observed_columns(d)
    nu = ctx.nuisance
    e0, e0_bar, q = ctx._e0(), ctx.e0_bar, ctx.q_hat
    W = (1 - G) * A / ((1 - q) * e0_bar)
    U = (1 - G) / (1 - q) * (A * (Y - nu.mu1) / e0_bar
                             - (1 - A) * (Y - nu.mu0) * e0 / (e0_bar * (1 - e0))
                             + A / e0_bar * (nu.mu1 - nu.mu0))
    return U, W


def eif_tau_att(ctx: ExtEifContext, d: StudyDataset, tau_att: float) -> np.ndarray:
    U, W = tau_att_terms(ctx, d)
    return U - W * tau_att


def estimate_tau_att(d: StudyDataset, ctx: ExtEifContext, z: float = 1.96):
    U, W = tau_att_terms(ctx, d)
    return report_from_terms(U, W, "tau_att", ctx.setting, ctx.nuisance, ctx.q_hat, z,
                             extra={"e0_bar": ctx.e0_bar})


def beta_att_terms(ctx: ExtEifContext, d: StudyDataset):
    """``(U, W)`` for the source-population ATT (all unstarred settings)."""
    _unstarred(ctx, "beta_att")
    _check(ctx, d)
    e1_bar = ctx.e1_bar
    if e1_bar is None or not 0 < e1_bar < 1:
        raise NotIdentifiableError("beta_att needs treated and control units in the source data")
    G, A, Y = observed_columns(d)
    nu = ctx.nuisance
    q = ctx.q_hat
    pi, e1, mu0, mu1 = nu.pi, nu.e1, nu.mu0, nu.mu1
    cate = mu1 - mu0
    k = q * e1_bar
    W = G * A / k
    fam = ctx.setting.family
    if fam == "I":
        U = G / k * (A * (Y - mu1) / e1 - (1 - A) * (Y - mu0) / (1 - e1)) * e1 + W * cate
    elif fam == "V":
        U = G / k * A * (Y - mu1) - 1 / k * (1 - A) * (Y - mu0) * pi * e1 / (1 - pi * e1) + W * cate
    else:
        e = ctx.e_pooled()
        U = 1 / k * (A * (Y - mu1) / e - (1 - A) * (Y - mu0) / (1 - e)) * pi * e1 + W * cate
    return U, W


def eif_beta_att(ctx: ExtEifContext, d: StudyDataset, beta_att: float) -> np.ndarray:
    U, W = beta_att_terms(ctx, d)
    return U - W * beta_att


def estimate_beta_att(d: StudyDataset, ctx: ExtEifContext, z: float = 1.96):
    U, W = beta_att_terms(ctx, d)
    return report_from_terms(U, W, "beta_att", ctx.setting, ctx.nuisance, ctx.q_hat, z,
                             extra={"e1_bar": ctx.e1_bar})


def terms_for(estimand: str, ctx: EifContext, d: StudyDataset):
    """Dispatch to the ``(U, W)`` builder of an estimand."""
    from .eif import tau_terms

    if estimand == "tau":
        return tau_terms(ctx, d)
    if estimand == "beta":
        return beta_terms(ctx, d)
    if estimand == "tau_att":
        return tau_att_terms(ctx, d)
    if estimand == "beta_att":
        return beta_att_terms(ctx, d)
    raise ValueError(f"unknown estimand {estimand!r}")
