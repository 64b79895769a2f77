"""Influence functions for tau: hand-computed values, degeneracies and unbiasedness at the truth."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusion_ate.data import DriftSpec, SampleRecord, SettingSpec, StudyDataset, Structure, parse_setting
from fusion_ate.eif import (
    EifContext,
    _tau_core,
    bootstrap_ci,
    eif_tau,
    eif_tau_record,
    estimate_tau,
    target_only_tau_terms,
    tau_terms,
)
from fusion_ate.errors import BootstrapUnstableError, ContextIncompleteError, DataError
from fusion_ate.lab.dgp import dgp_generate, get_case, true_nuisance
from fusion_ate.nuisance.crossfit import NuisanceSurface
from fusion_ate.recipe import EstimationRecipe

from conftest import random_dataset, random_surface

N_RECORDS = 10_000
MACHINE = dict(rtol=1e-12, atol=1e-12)


def one_surface(**kw):
    base = dict(pi=0.4, e1=0.7, e0=0.2, mu0=1.5, mu1=4.0, r0=2.0, r1=0.5)
    base.update(kw)
    arr = {k: (None if v is None else np.array([float(v)])) for k, v in base.items()}
    return NuisanceSurface(fold_id=np.zeros(1, dtype=np.int64), **arr)


def one_record_phi(setting, g, a, y, tau, q=0.3, **kw):
    ctx = EifContext(setting, one_surface(**kw), q)
    U, W = _tau_core(ctx, np.array([g]), np.array([a]), np.array([y]))
    return float(U[0] - W[0] * tau)


class TestHandComputed:
    """Scalar evaluations written out term by term, independent of the vectorized code."""

    pi, e1, e0, mu0, mu1, q, tau = 0.4, 0.7, 0.2, 1.5, 4.0, 0.3, 2.0

    def test_setting_I_source_treated(self):
        y = 5.0
        expected = (1 / (1 - self.q)) * (1 - self.pi) / self.pi * (y - self.mu1) / self.e1
        got = one_record_phi(parse_setting("I"), 1, 1, y, self.tau)
        assert got == pytest.approx(expected, rel=1e-14)

    def test_setting_I_target(self):
        expected = (self.mu1 - self.mu0 - self.tau) / (1 - self.q)
        assert one_record_phi(parse_setting("III"), 0, 0, 0.0, self.tau) == pytest.approx(expected, rel=1e-14)

    def test_setting_V_target_control(self):
        y = 0.5
        e = self.e1 * self.pi
        expected = ((1 - self.pi) / (1 - self.q) * (-(y - self.mu0) / (1 - e))
                    + (self.mu1 - self.mu0 - self.tau) / (1 - self.q))
        assert one_record_phi(parse_setting("V"), 0, 0, y, self.tau, e0=0.0) == pytest.approx(expected, rel=1e-14)

    def test_setting_VI_target_treated(self):
        y = 3.0
        e = self.e0 * (1 - self.pi) + self.e1 * self.pi
        expected = ((1 - self.pi) / (1 - self.q) * (y - self.mu1) / e
                    + (self.mu1 - self.mu0 - self.tau) / (1 - self.q))
        assert one_record_phi(parse_setting("VI"), 0, 1, y, self.tau) == pytest.approx(expected, rel=1e-14)

    def test_setting_VI_star_source_control(self):
        eps, y = 0.8, 1.0
        r0, r1 = eps**2 * 2.0, eps**2 * 0.5
        w0 = self.pi * (1 - self.e1) + (1 - self.pi) * (1 - self.e0) * r0
        expected = -(1 - self.pi) / (1 - self.q) * eps * (y - self.mu0) / w0
        s = parse_setting("VI*", eps)
        assert one_record_phi(s, 1, 0, y, self.tau) == pytest.approx(expected, rel=1e-14)

    def test_setting_VI_star_target_treated(self):
        eps, y = 0.8, 3.0
        r0, r1 = eps**2 * 2.0, eps**2 * 0.5
        w1 = self.pi * self.e1 + (1 - self.pi) * self.e0 * r1
        expected = ((1 - self.pi) / (1 - self.q) * r1 * (y - eps * self.mu1) / w1
                    + (eps * self.mu1 - eps * self.mu0 - self.tau) / (1 - self.q))
        s = parse_setting("VI*", eps)
        assert one_record_phi(s, 0, 1, y, self.tau) == pytest.approx(expected, rel=1e-14)

    def test_setting_V_star_target_control(self):
        eps, y = 1.2, 0.0
        r0 = eps**2 * 2.0
        w0 = self.pi * (1 - self.e1) + (1 - self.pi) * r0
        expected = (-(1 - self.pi) / (1 - self.q) * r0 * (y - eps * self.mu0) / w0
                    + (eps * (self.mu1 - self.mu0) - self.tau) / (1 - self.q))
        s = parse_setting("V*", eps)
        assert one_record_phi(s, 0, 0, y, self.tau, e0=0.0) == pytest.approx(expected, rel=1e-14)


class TestDegeneracies:
    """Pointwise identities between settings, on 10^4 random records."""

    def test_VI_with_e0_zero_is_V(self, rng):
        d = random_dataset(N_RECORDS, rng, target_treated=False)
        nu = random_surface(N_RECORDS, rng, e0_value=0.0)
        v = eif_tau(EifContext(parse_setting("V"), nu, 0.4), d, 1.3)
        vi = eif_tau(EifContext(parse_setting("VI"), nu, 0.4), d, 1.3)
        np.testing.assert_allclose(vi, v, **MACHINE)

    def test_VI_with_pi_zero_is_target_only(self, rng):
        d = random_dataset(N_RECORDS, rng)
        nu = random_surface(N_RECORDS, rng, pi=0.0)
        U, W = tau_terms(EifContext(parse_setting("VI"), nu, 0.4), d)
        U0, W0 = target_only_tau_terms(nu, d, 0.4)
        tgt = d.g == 0
        np.testing.assert_allclose((U - W * 0.7)[tgt], (U0 - W0 * 0.7)[tgt], **MACHINE)

    @pytest.mark.parametrize("label", ["I", "II", "III", "IV"])
    def test_starred_identity_bitwise_for_I_family(self, rng, label):
        d = random_dataset(N_RECORDS, rng)
        nu = random_surface(N_RECORDS, rng)
        plain = eif_tau(EifContext(parse_setting(label), nu, 0.5), d, 0.9)
        star = eif_tau(EifContext(parse_setting(label + "*", 1.0), nu, 0.5), d, 0.9)
        np.testing.assert_array_equal(star, plain)

    @pytest.mark.parametrize("label", ["V", "VI"])
    def test_starred_identity_unit_ratio(self, rng, label):
        d = random_dataset(N_RECORDS, rng, target_treated=(label == "VI"))
        nu = random_surface(N_RECORDS, rng, r=1.0, e0_value=0.0 if label == "V" else None)
        plain = eif_tau(EifContext(parse_setting(label), nu, 0.5), d, 0.9)
        star = eif_tau(EifContext(parse_setting(label + "*", 1.0), nu, 0.5), d, 0.9)
        np.testing.assert_allclose(star, plain, **MACHINE)

    def test_custom_identity_drift_matches_unstarred(self, rng):
        d = random_dataset(N_RECORDS, rng)
        nu = random_surface(N_RECORDS, rng, r=1.0)
        ident = DriftSpec.custom(lambda u: u, np.ones_like, lambda u: u, np.ones_like, name="id")
        for label in ("I", "VI"):
            plain = eif_tau(EifContext(parse_setting(label), nu, 0.5), d, 0.2)
            star = eif_tau(EifContext(SettingSpec(parse_setting(label).structure, ident), nu, 0.5), d, 0.2)
            np.testing.assert_allclose(star, plain, **MACHINE)

    def test_V_star_with_e0_zero_is_VI_star(self, rng):
        d = random_dataset(N_RECORDS, rng, target_treated=False)
        nu = random_surface(N_RECORDS, rng, e0_value=0.0)
        v = eif_tau(EifContext(parse_setting("V*", 0.7), nu, 0.4), d, 1.1)
        vi = eif_tau(EifContext(parse_setting("VI*", 0.7), nu, 0.4), d, 1.1)
        np.testing.assert_allclose(vi, v, **MACHINE)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_I_family_point_affine_in_eps(seed, e_a, e_b):
    """At fixed nuisances the setting-I* one-step point is affine in a tied linear drift."""
    rng = np.random.default_rng(seed)
    d = random_dataset(60, rng)
    nu = random_surface(60, rng)
    pts = [float(np.mean(tau_terms(EifContext(parse_setting("I*", e), nu, d.q_hat), d)[0]))
           for e in (e_a, e_b, (e_a + e_b) / 2)]
    assert pts[2] == pytest.approx((pts[0] + pts[1]) / 2, rel=1e-9, abs=1e-9)


def test_record_api_matches_vectorized(rng):
    d = random_dataset(30, rng)
    nu = random_surface(30, rng)
    for label in ("I", "VI", "VI*"):
        s = parse_setting(label, 0.9)
        ctx = EifContext(s, nu, d.q_hat)
        vec = eif_tau(ctx, d, 1.0)
        recs = d.records()
        for i in (0, 1, 7, 29):
            assert eif_tau_record(ctx, recs[i], i, 1.0) == pytest.approx(vec[i], rel=1e-13, abs=1e-13)


def test_record_api_rejects_missing_target_values(rng):
    nu = random_surface(1, rng)
    ctx = EifContext(parse_setting("VI"), nu, 0.5)
    with pytest.raises(DataError):
        eif_tau_record(ctx, SampleRecord((0.0, 0.0), None, None, 0), 0, 1.0)


def test_missing_target_columns_rejected(rng):
    d = random_dataset(40, rng, target_ay=False)
    nu = random_surface(40, rng)
    with pytest.raises(DataError):
        tau_terms(EifContext(parse_setting("VI"), nu, d.q_hat), d)
    # setting I ignores target treatment and outcome entirely
    tau_terms(EifContext(parse_setting("I"), nu, d.q_hat), d)


def test_missing_e0_is_context_error(rng):
    d = random_dataset(40, rng)
    nu = random_surface(40, rng, e0=False)
    with pytest.raises(ContextIncompleteError):
        tau_terms(EifContext(parse_setting("VI"), nu, d.q_hat), d)


def test_non_finite_tau_rejected(rng):
    d = random_dataset(10, rng)
    with pytest.raises(ValueError):
        eif_tau(EifContext(parse_setting("I"), random_surface(10, rng), 0.5), d, math.nan)


@pytest.mark.parametrize("case,label,eps", [("C1", "I", None), ("C1", "VI", None), ("C4", "V", None),
                                            ("C1", "I*", 0.8), ("C1", "VI*", 0.8), ("C4", "V*", 0.8),
                                            ("C11", "VI", None), ("C8", "I", None)])
def test_mean_zero_at_truth(case, label, eps):
    """With true nuisances, the influence function at the true estimand averages to zero."""
    spec = get_case(case) if eps is None else get_case(case).with_drift(eps)
    d, _ = dgp_generate(spec, 200_000, 99)
    nu = true_nuisance(spec, d)
    if label.startswith("V") and not label.startswith("VI"):
        nu = nu.replace(e0=np.zeros(d.n))
    s = parse_setting(label, eps) if eps else parse_setting(label)
    phi = eif_tau(EifContext(s, nu, spec.q_true()), d, spec.truth("tau"))
    se = phi.std() / math.sqrt(d.n)
    assert abs(phi.mean()) < 4 * se


def test_report_fields(rng):
    d, _ = dgp_generate(get_case("C1"), 1000, 3)
    nu = true_nuisance(get_case("C1"), d)
    rep = estimate_tau(d, EifContext(parse_setting("VI"), nu, d.q_hat))
    U, W = tau_terms(EifContext(parse_setting("VI"), nu, d.q_hat), d)
    assert rep.point == pytest.approx(np.mean(U))
    phi = U - W * rep.point
    assert rep.variance == pytest.approx(np.mean(phi**2) / d.n)
    assert rep.ci_high - rep.ci_low == pytest.approx(2 * 1.96 * math.sqrt(rep.variance))
    assert abs(rep.diagnostics["mean_centered_eif"]) < 1e-12
    assert rep.setting == "VI" and rep.n == 1000


def test_known_pi_point_is_ratio(rng):
    d, _ = dgp_generate(get_case("C1"), 1000, 3)
    nu = true_nuisance(get_case("C1"), d)
    ctx = EifContext(parse_setting("I"), nu, d.q_hat, known_pi=True)
    U, W = tau_terms(ctx, d)
    rep = estimate_tau(d, ctx)
    assert rep.point == pytest.approx(np.mean(U) / np.mean(W), rel=1e-14)
    assert rep.diagnostics["known_pi"] is True


class TestBootstrap:
    def test_interval_brackets_point_and_is_seeded(self):
        d, _ = dgp_generate(get_case("C1"), 400, 1)
        recipe = EstimationRecipe(parse_setting("VI"))
        lo, hi = bootstrap_ci(d, recipe, B=100, seed=5)
        point = recipe.run(d).point
        assert lo < point < hi
        assert bootstrap_ci(d, recipe, B=100, seed=5) == (lo, hi)

    def test_minimum_B(self):
        d, _ = dgp_generate(get_case("C1"), 100, 1)
        with pytest.raises(ValueError):
            bootstrap_ci(d, EstimationRecipe(parse_setting("I")), B=50)

    def test_unstable_resamples(self):
        # a lone treated source unit vanishes from most resamples
        x = np.arange(40.0)[:, None]
        g = np.array([1] * 20 + [0] * 20)
        a = np.zeros(40)
        a[0] = 1
        d = StudyDataset.from_arrays(x, g, a, np.arange(40.0))
        with pytest.raises(BootstrapUnstableError):
            bootstrap_ci(d, EstimationRecipe(parse_setting("I")), B=100)
