"""Simulation designs C1 to C20.

Every case draws ``X ~ N(0, I_2)``, then the group ``G | X``, the treatment
``A | X, G`` and both potential outcomes. Cases come in base/controls-only
pairs that differ only in the target propensity, which is forced to zero in
the second member.

Optional extras, used by the sensitivity and variance-ratio tooling:

* ``eps0``, ``eps1`` scale the target-population outcome means (linear
  posterior drift ``psi_a(u) = eps_a * u``);
* ``target_sigma0``, ``target_sigma1`` override the target noise SDs.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.special import expit

from ..data import StudyDataset, _masked
from ..nuisance.crossfit import NuisanceSurface

CASES = tuple(f"C{i}" for i in range(1, 21))


@dataclass(frozen=True)
class DgpSpec:
    case_id: str
    score_form: str = "linear"  # "linear" or "complex"
    pi_shift: float = 0.0
    outcome_form: str = "linear"  # "linear", "quadratic", "c15", "c16"
    sigma1: float = 2.0
    sigma0: float = 2.0
    e0_zero: bool = False
    eps0: float = 1.0
    eps1: float = 1.0
    target_sigma1: Optional[float] = None
    target_sigma0: Optional[float] = None

    # --- closed-form maps -------------------------------------------------

    def pi(self, x1, x2):
        if self.score_form == "linear":
            lin = (x1 + x2 + self.pi_shift) / 2
        else:
            lin = (2 * x1 + 2 * x2 + 2 * x1 * x2 - x1 * x1) / 4 + self.pi_shift / 2
        return expit(lin)

    def e(self, x1, x2, g):
        """Propensity ``P(A=1 | X, G=g)``."""
        if self.score_form == "linear":
            lin = (x1 - x2) / 2
        else:
            lin = (2 * x1 - 2 * x2 + 2 * x1 * x2 - x1 * x1) / 4
        p = expit(lin + g)
        if self.e0_zero:
            p = np.where(np.asarray(g) == 0, 0.0, p)
        return p

    def _base_mu(self, x1, x2, a, g):
        f = self.outcome_form
        if a == 1:
            if f == "linear":
                return 3 + 2 * x1 + x2
            if f == "quadratic":
                return 3 + 2 * x1 + x2 + x1 * x1
            if f == "c15":
                return 3 + 2 * x1 + np.exp(x2) + (1 - g) * x1 / 2
            if f == "c16":
                return 3 + 2 * x1 + np.sin(x2) + x1 * x1
        else:
            if f == "linear":
                return 1 - 2 * x1 + 3 * x2
            if f == "quadratic":
                return 1 - 2 * x1 + 3 * x2 + x1 * x2
            if f == "c15":
                with np.errstate(divide="ignore"):
                    return 1 - 2 * x1 + 3 * x2 + np.log(np.abs(x1))
            if f == "c16":
                return 1 - 2 * x1 + 3 * x2 + x1 * x2
        raise ValueError(f"unknown outcome form {f!r}")

    def mu(self, x1, x2, a, g):
        """``E[Y(a) | X, G=g]``; target means carry the drift factor."""
        base = self._base_mu(x1, x2, a, g)
        if g == 1:
            return base
        return (self.eps1 if a == 1 else self.eps0) * base

    def noise_sd(self, a, g):
        if g == 0:
            over = self.target_sigma1 if a == 1 else self.target_sigma0
            if over is not None:
                return over
        return self.sigma1 if a == 1 else self.sigma0

    def ratio(self, a) -> float:
        """Baseline variance ratio source/target for arm ``a``."""
        return (self.noise_sd(a, 1) / self.noise_sd(a, 0)) ** 2

    def with_drift(self, eps0: float, eps1: Optional[float] = None) -> "DgpSpec":
        return replace(self, eps0=eps0, eps1=eps0 if eps1 is None else eps1)

    def controls_only(self) -> "DgpSpec":
        return replace(self, e0_zero=True)

    # --- population quantities ---------------------------------------------

    def q_true(self) -> float:
        return _q(self)

    def truth(self, estimand: str = "tau") -> float:
        return _truth(self, estimand)


_BASE = {
    "C1": DgpSpec("C1"),
    "C2": DgpSpec("C2", score_form="complex"),
    "C3": DgpSpec("C3", outcome_form="quadratic"),
    "C7": DgpSpec("C7", pi_shift=3.0),
    "C8": DgpSpec("C8", pi_shift=-3.0),
    "C11": DgpSpec("C11", sigma1=1.0, sigma0=3.0),
    "C12": DgpSpec("C12", sigma1=3.0, sigma0=1.0),
    "C15": DgpSpec("C15", score_form="complex", outcome_form="c15"),
    "C16": DgpSpec("C16", score_form="complex", outcome_form="c16"),
    "C17": DgpSpec("C17", score_form="complex", outcome_form="quadratic"),
}
_PAIRS = {"C4": "C1", "C5": "C2", "C6": "C3", "C9": "C7", "C10": "C8", "C13": "C11", "C14": "C12",
          "C18": "C15", "C19": "C16", "C20": "C17"}
PAIR_OF = dict(_PAIRS)


def get_case(case_id: str, **overrides) -> DgpSpec:
    """Look up a case by id (``"C1"``..``"C20"``), with optional field overrides."""
    cid = case_id.upper()
    if cid in _BASE:
        spec = _BASE[cid]
    elif cid in _PAIRS:
        spec = replace(_BASE[_PAIRS[cid]], case_id=cid, e0_zero=True)
    else:
        raise ValueError(f"unknown case {case_id!r}")
    return replace(spec, **overrides) if overrides else spec


# --------------------------------------------------------------------------
# integration over X ~ N(0, I_2)

_GH_X, _GH_W = hermegauss(96)
_GH_W = _GH_W / math.sqrt(2 * math.pi)


def expect(fn) -> float:
    """``E[fn(X1, X2)]`` for standard normal ``X``.

    Gauss-Hermite in ``x2`` (every design is smooth in ``x2``) and adaptive
    quadrature in ``x1`` split at 0, where ``log|x1|`` is singular.
    """
    def inner(x1):
        return float(np.sum(_GH_W * fn(np.full_like(_GH_X, x1), _GH_X))) * math.exp(-x1 * x1 / 2) / math.sqrt(2 * math.pi)

    lo, _ = integrate.quad(inner, -np.inf, 0.0, limit=200, epsabs=1e-12, epsrel=1e-11)
    hi, _ = integrate.quad(inner, 0.0, np.inf, limit=200, epsabs=1e-12, epsrel=1e-11)
    return lo + hi


@functools.lru_cache(maxsize=None)
def _q(spec: DgpSpec) -> float:
    return expect(spec.pi)


@functools.lru_cache(maxsize=None)
def _truth(spec: DgpSpec, estimand: str) -> float:
    s = spec
    if estimand == "tau":
        num = expect(lambda a, b: (1 - s.pi(a, b)) * (s.mu(a, b, 1, 0) - s.mu(a, b, 0, 0)))
        den = expect(lambda a, b: 1 - s.pi(a, b))
    elif estimand == "beta":
        num = expect(lambda a, b: s.pi(a, b) * (s.mu(a, b, 1, 1) - s.mu(a, b, 0, 1)))
        den = expect(s.pi)
    elif estimand == "tau_att":
        if s.e0_zero:
            return float("nan")
        num = expect(lambda a, b: (1 - s.pi(a, b)) * s.e(a, b, 0) * (s.mu(a, b, 1, 0) - s.mu(a, b, 0, 0)))
        den = expect(lambda a, b: (1 - s.pi(a, b)) * s.e(a, b, 0))
    elif estimand == "beta_att":
        num = expect(lambda a, b: s.pi(a, b) * s.e(a, b, 1) * (s.mu(a, b, 1, 1) - s.mu(a, b, 0, 1)))
        den = expect(lambda a, b: s.pi(a, b) * s.e(a, b, 1))
    else:
        raise ValueError(f"unknown estimand {estimand!r}")
    return num / den


def mc_truth(spec: DgpSpec, estimand: str = "tau", draws: int = 10**7, seed: int = 0, chunk: int = 10**6):
    """Brute-force Monte Carlo of an estimand: ``(value, standard error)``.

    Noise-free: conditional means are averaged with the group/treatment
    probabilities as weights, so only the ``X`` draws carry sampling error.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    num = []
    den = []
    left = draws
    while left > 0:
        m = min(chunk, left)
        left -= m
        x = rng.standard_normal((m, 2))
        x1, x2 = x[:, 0], x[:, 1]
        pi = spec.pi(x1, x2)
        if estimand == "tau":
            w, g = 1 - pi, 0
        elif estimand == "beta":
            w, g = pi, 1
        elif estimand == "tau_att":
            w, g = (1 - pi) * spec.e(x1, x2, 0), 0
        elif estimand == "beta_att":
            w, g = pi * spec.e(x1, x2, 1), 1
        else:
            raise ValueError(f"unknown estimand {estimand!r}")
        num.append(w * (spec.mu(x1, x2, 1, g) - spec.mu(x1, x2, 0, g)))
        den.append(w)
    num = np.concatenate(num)
    den = np.concatenate(den)
    value = num.mean() / den.mean()
    infl = (num - value * den) / den.mean()
    return float(value), float(infl.std() / math.sqrt(draws))


# --------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class Latent:
    """Per-record quantities never passed to estimators."""

    y0: np.ndarray
    y1: np.ndarray
    pi: np.ndarray
    e: np.ndarray


def dgp_generate(spec: DgpSpec, n: int, seed) -> tuple[StudyDataset, Latent]:
    """Draw ``n`` pooled records; every target record carries ``a`` and ``y``.

    ``seed`` may be an int or a sequence of ints (fed to ``SeedSequence``).
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.standard_normal((n, 2))
    x1, x2 = x[:, 0], x[:, 1]
    pi = spec.pi(x1, x2)
    g = (rng.random(n) < pi).astype(np.int64)
    e = spec.e(x1, x2, g)
    a = (rng.random(n) < e).astype(float)
    z1 = rng.standard_normal(n)
    z0 = rng.standard_normal(n)
    y1 = np.empty(n)
    y0 = np.empty(n)
    for grp in (0, 1):
        idx = g == grp
        y1[idx] = spec.mu(x1[idx], x2[idx], 1, grp) + spec.noise_sd(1, grp) * z1[idx]
        y0[idx] = spec.mu(x1[idx], x2[idx], 0, grp) + spec.noise_sd(0, grp) * z0[idx]
    y = np.where(a == 1, y1, y0)
    ones = np.ones(n, dtype=bool)
    d = StudyDataset(x, g, _masked(a, ones), _masked(y, ones))
    return d, Latent(y0, y1, pi, e)


def true_nuisance(spec: DgpSpec, d: StudyDataset) -> NuisanceSurface:
    """Closed-form nuisance values at each record's covariates.

    ``mu_a`` are the source-population means; target means are
    ``eps_a * mu_a`` for the linear-drift designs.
    """
    x1, x2 = d.x[:, 0], d.x[:, 1]
    n = d.n
    return NuisanceSurface(
        pi=spec.pi(x1, x2),
        e1=spec.e(x1, x2, 1),
        e0=np.asarray(spec.e(x1, x2, np.zeros(n)), dtype=float),
        mu0=spec.mu(x1, x2, 0, 1),
        mu1=spec.mu(x1, x2, 1, 1),
        r0=np.full(n, spec.ratio(0)),
        r1=np.full(n, spec.ratio(1)),
        fold_id=np.zeros(n, dtype=np.int64),
        method="oracle",
    )


def ag_frequency(d: StudyDataset) -> dict:
    """Joint counts of (A, G) with missing target treatments tallied apart."""
    out = {}
    for g in (0, 1):
        for a in (0, 1):
            out[f"A={a},G={g}"] = int(np.count_nonzero((d.g == g) & d.a_observed & (d.a.data == a)))
    out["A=missing,G=0"] = int(np.count_nonzero((d.g == 0) & ~d.a_observed))
    return out
