"""Monte Carlo evaluation and comparison of semiparametric efficiency bounds.

A bound is ``E[phi^2]`` with ``phi`` evaluated at the true nuisances and the
true estimand; it is approximated by the sample mean of ``phi^2`` over a
large simulated sample, with standard error ``sd(phi^2)/sqrt(n_mc)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..data import DriftSpec, SettingSpec, StudyDataset, parse_setting
from ..eif import EifContext, target_only_tau_terms
from ..estimands import ExtEifContext, terms_for
from .dgp import PAIR_OF, DgpSpec, dgp_generate, get_case, true_nuisance


@dataclass(frozen=True)
class BoundEstimate:
    setting: str
    case_id: str
    value: float
    mc_se: float
    n_mc: int
    estimand: str = "tau"


def _setting_for(spec: DgpSpec, setting) -> SettingSpec:
    if isinstance(setting, SettingSpec):
        return setting
    label = setting.strip()
    if label.endswith("*"):
        return parse_setting(label, spec.eps0, spec.eps1)
    return parse_setting(label)


def _phi_sq(spec: DgpSpec, setting: SettingSpec, d: StudyDataset, estimand="tau", known_pi=False):
    nu = true_nuisance(spec, d)
    if setting.family == "V":
        nu = nu.replace(e0=np.zeros(d.n))
    ctx = ExtEifContext(setting, nu, spec.q_true(), known_pi,
                        e0_bar=None if spec.e0_zero else _marginal_e(spec, 0),
                        e1_bar=_marginal_e(spec, 1))
    U, W = terms_for(estimand, ctx, d)
    phi = U - W * spec.truth(estimand)
    return phi * phi


def _marginal_e(spec: DgpSpec, g: int) -> float:
    from .dgp import expect

    if g == 1:
        return expect(lambda a, b: spec.pi(a, b) * spec.e(a, b, 1)) / spec.q_true()
    return expect(lambda a, b: (1 - spec.pi(a, b)) * spec.e(a, b, 0)) / (1 - spec.q_true())


def _summarize(values, setting_label, case_id, estimand) -> BoundEstimate:
    n = values.size
    return BoundEstimate(setting_label, case_id, float(values.mean()), float(values.std(ddof=1) / math.sqrt(n)), n, estimand)


def mc_bound(spec: DgpSpec, setting, n_mc: int = 10**6, seed=0, estimand: str = "tau",
             known_pi: bool = False) -> BoundEstimate:
    """Efficiency bound of ``setting`` under design ``spec``.

    Starred labels such as ``"VI*"`` pick up the design's own drift factors.
    """
    s = _setting_for(spec, setting)
    d, _ = dgp_generate(spec, n_mc, seed)
    label = s.label + ("|known-pi" if known_pi else "")
    return _summarize(_phi_sq(spec, s, d, estimand, known_pi), label, spec.case_id, estimand)


def target_only_bound(spec: DgpSpec, n_mc: int = 10**6, seed=0) -> BoundEstimate:
    """Bound for ``tau`` when only the target data are used (needs ``e0 > 0``)."""
    d, _ = dgp_generate(spec, n_mc, seed)
    nu = true_nuisance(spec, d)
    U, W = target_only_tau_terms(nu, d, spec.q_true())
    phi = U - W * spec.truth("tau")
    return _summarize(phi * phi, "target-only", spec.case_id, "tau")


def closed_form_bound_I(spec: DgpSpec, n_mc: int = 10**6, seed=0) -> BoundEstimate:
    """The setting-I bound written as an integral over ``X`` alone.

    ``E[(1-pi)^2/((1-q)^2 pi) (s1^2/e1 + s0^2/(1-e1))] + E[(1-pi)(cate - tau)^2]/(1-q)^2``
    with source noise variances ``s_a^2``; averaged over ``n_mc`` draws of ``X``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([*np.atleast_1d(seed).tolist(), 17]))
    x = rng.standard_normal((n_mc, 2))
    x1, x2 = x[:, 0], x[:, 1]
    q, tau = spec.q_true(), spec.truth("tau")
    pi = spec.pi(x1, x2)
    e1 = spec.e(x1, x2, 1)
    cate = spec.mu(x1, x2, 1, 0) - spec.mu(x1, x2, 0, 0)
    noise = (1 - pi) ** 2 / ((1 - q) ** 2 * pi) * (spec.noise_sd(1, 1) ** 2 / e1 + spec.noise_sd(0, 1) ** 2 / (1 - e1))
    spread = (1 - pi) * (cate - tau) ** 2 / (1 - q) ** 2
    return _summarize(noise + spread, "I (closed form)", spec.case_id, "tau")


# --------------------------------------------------------------------------
# ordering reports


@dataclass
class Check:
    name: str
    kind: str  # "inequality" (claim lhs > rhs), "identity" (claim lhs == rhs) or "comparison"
    lhs: float
    rhs: float
    se: float
    status: str = ""

    @property
    def diff(self) -> float:
        return self.lhs - self.rhs


def inequality(name, lhs: BoundEstimate, rhs: BoundEstimate, k: float = 5.0) -> Check:
    """Claim ``lhs > rhs``: certified when the gap exceeds ``k`` combined standard errors."""
    se = math.hypot(lhs.mc_se, rhs.mc_se)
    gap = lhs.value - rhs.value
    status = "certified" if gap > k * se else ("violated" if gap < -k * se else "inconclusive")
    return Check(name, "inequality", lhs.value, rhs.value, se, status)


def comparison(name, lhs: BoundEstimate, rhs: BoundEstimate, k: float = 5.0) -> Check:
    """No claimed direction; status says which side is larger, if resolvable."""
    c = inequality(name, lhs, rhs, k)
    c.kind = "comparison"
    c.status = {"certified": "lhs larger", "violated": "rhs larger"}.get(c.status, "indistinguishable")
    return c


def identity(name, lhs: float, lhs_se: float, rhs: float, rhs_se: float, k: float = 3.0) -> Check:
    se = math.hypot(lhs_se, rhs_se)
    return Check(name, "identity", lhs, rhs, se, "matches" if abs(lhs - rhs) <= k * se else "mismatch")


@dataclass
class OrderingReport:
    family: str
    bounds: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def violations(self) -> list:
        return [c for c in self.checks if c.status in ("violated", "mismatch")]

    def check(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        for key, b in self.bounds.items():
            yield {"setting": b.setting, "case": b.case_id, "bound": b.value, "mc_se": b.mc_se}


def _mean_se(v):
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def compare_bounds(family: str, n_mc: int = 10**6, seed=0, drift: Optional[float] = None,
                   settings: Sequence[str] = ("I", "V", "VI")) -> OrderingReport:
    """Evaluate bounds on a base design and its controls-only partner and check the orderings.

    Parameters
    ----------
    family : str
        Base case id, e.g. ``"C1"`` (its partner ``"C4"`` supplies setting V).
    drift : float, optional
        Impose linear drift ``eps`` on both arms and compare the starred
        settings instead.
    """
    base = get_case(family)
    partner_id = next((k for k, v in PAIR_OF.items() if v == base.case_id), None)
    if partner_id is None:
        raise ValueError(f"{family} is not a base design")
    partner = get_case(partner_id)
    if drift is not None:
        base, partner = base.with_drift(drift), partner.with_drift(drift)
    star = "*" if drift is not None else ""
    report = OrderingReport(family + (f" (drift {drift})" if drift is not None else ""))

    d_base, _ = dgp_generate(base, n_mc, seed)
    d_part, _ = dgp_generate(partner, n_mc, seed)
    sq = {}
    for lab in settings:
        s = _setting_for(base, lab + star)
        spec, d = (partner, d_part) if s.family == "V" else (base, d_base)
        sq[s.label] = _phi_sq(spec, s, d)
        report.bounds[s.label] = _summarize(sq[s.label], s.label, spec.case_id, "tau")

    I, V, VI = (report.bounds.get(f"{r}{star}") for r in ("I", "V", "VI"))
    if I and V:
        report.checks.append(inequality(f"I{star} > V{star}", I, V))
    if I and VI:
        report.checks.append(inequality(f"I{star} > VI{star}", I, VI))
    if V and VI:
        report.checks.append(comparison(f"V{star} vs VI{star}", V, VI))

    if drift is None:
        x1, x2 = d_base.x[:, 0], d_base.x[:, 1]
        q, tau = base.q_true(), base.truth("tau")
        pi, e1, e0 = base.pi(x1, x2), base.e(x1, x2, 1), base.e(x1, x2, 0 * x1)
        s1, s0 = base.noise_sd(1, 1) ** 2, base.noise_sd(0, 1) ** 2
        cate = base.mu(x1, x2, 1, 0) - base.mu(x1, x2, 0, 0)

        if VI:
            to = target_only_bound(base, n_mc, seed)
            report.bounds["target-only"] = to
            report.checks.append(inequality("target-only > VI", to, VI))

        if I:
            known = _phi_sq(base, _setting_for(base, "I"), d_base, known_pi=True)
            report.bounds["I|known-pi"] = _summarize(known, "I|known-pi", base.case_id, "tau")
            gain = (cate - tau) ** 2 * pi * (1 - pi) / (1 - q) ** 2
            report.checks.append(identity("known-pi gain", *_mean_se(sq["I"] - known), *_mean_se(gain)))

        if I and V:
            g1 = (1 - pi) / ((1 - pi) + (1 - e1) * pi)
            gain = g1 * (1 - pi) ** 2 * s0 / ((1 - q) ** 2 * pi * (1 - e1))
            # setting I's bound is the same functional on both members of the pair
            sq_i_part = _phi_sq(partner, _setting_for(partner, "I"), d_part)
            report.checks.append(identity("gain I-V (gamma1 form)", *_mean_se(sq_i_part - sq["V"]), *_mean_se(gain)))

        if V and VI:
            e = e0 * (1 - pi) + e1 * pi
            alpha3 = (1 - pi) * e0 / e
            gamma3 = (1 - pi) * e0 / (1 - e)
            gap = (1 - pi) ** 2 / (1 - q) ** 2 * (alpha3 * s1 / (pi * e1) - gamma3 * s0 / (1 - pi * e1))
            chk = identity("gap V-VI (gamma3 form)", *_mean_se(sq["V"] - sq["VI"]), *_mean_se(gap))
            report.checks.append(chk)
            if chk.status != "matches":
                report.notes.append("V-VI gap disagrees with its gamma3 closed form")
    return report
