"""Simulation designs: population truths against independent oracles."""
import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from fusion_ate.lab.dgp import (
    CASES,
    PAIR_OF,
    ag_frequency,
    dgp_generate,
    expect,
    get_case,
    mc_truth,
    true_nuisance,
)

# Frozen [DERIVED] values for C1, computed by the rotated 1-D integrals below
C1_TAU = 1.55075
C1_BETA = 2.44925
C1_TAU_ATT = 2.8985
C1_BETA_ATT = 3.2382
C15_TAU = 3.6599


def _normal_expect(fn):
    """E[fn(Z)] for Z ~ N(0, 1) by adaptive quadrature."""
    val, _ = integrate.quad(lambda z: fn(z) * stats.norm.pdf(z), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val


class TestC1Oracle:
    """For C1, S = (X1+X2)/sqrt2 and D = (X1-X2)/sqrt2 are independent N(0,1).

    pi = expit(S/sqrt2), e_g = expit(D/sqrt2 + g) and the effect is
    2 + (2S + 6D)/sqrt2, so every estimand factorises into 1-D integrals.
    """

    r2 = math.sqrt(2)

    def pi(self, s):
        return expit(s / self.r2)

    def test_tau(self):
        val = 2 + (2 / self.r2) * _normal_expect(lambda s: (1 - self.pi(s)) * s) / 0.5
        assert val == pytest.approx(C1_TAU, abs=5e-6)
        assert get_case("C1").truth("tau") == pytest.approx(val, abs=1e-9)

    def test_beta(self):
        val = 2 + (2 / self.r2) * _normal_expect(lambda s: self.pi(s) * s) / 0.5
        assert val == pytest.approx(C1_BETA, abs=5e-6)
        assert get_case("C1").truth("beta") == pytest.approx(val, abs=1e-9)

    def test_tau_att(self):
        e0 = lambda d: expit(d / self.r2)  # noqa: E731
        val = (2 + (2 / self.r2) * _normal_expect(lambda s: (1 - self.pi(s)) * s) / 0.5
               + (6 / self.r2) * _normal_expect(lambda d: e0(d) * d) / _normal_expect(e0))
        assert val == pytest.approx(C1_TAU_ATT, abs=5e-5)
        assert get_case("C1").truth("tau_att") == pytest.approx(val, abs=1e-9)

    def test_beta_att(self):
        e1 = lambda d: expit(d / self.r2 + 1)  # noqa: E731
        val = (2 + (2 / self.r2) * _normal_expect(lambda s: self.pi(s) * s) / 0.5
               + (6 / self.r2) * _normal_expect(lambda d: e1(d) * d) / _normal_expect(e1))
        assert val == pytest.approx(C1_BETA_ATT, abs=5e-5)
        assert get_case("C1").truth("beta_att") == pytest.approx(val, abs=1e-9)

    def test_tau_plus_beta(self):
        # with q = 1/2 the S-terms of the two ATEs cancel, since E[S] = 0
        spec = get_case("C1")
        assert spec.truth("tau") + spec.truth("beta") == pytest.approx(4.0, abs=1e-9)

    def test_q(self):
        assert get_case("C1").q_true() == pytest.approx(0.5, abs=1e-12)


def test_linear_drift_scales_tau():
    spec = get_case("C1")
    drifted = spec.with_drift(0.8)
    assert drifted.truth("tau") == pytest.approx(0.8 * spec.truth("tau"), rel=1e-10)
    assert drifted.truth("beta") == pytest.approx(spec.truth("beta"), rel=1e-12)


def test_c15_truth_frozen():
    assert get_case("C15").truth("tau") == pytest.approx(C15_TAU, abs=5e-5)


@pytest.mark.parametrize("case,estimand", [
    ("C1", "tau"), ("C2", "tau"), ("C3", "beta"), ("C7", "tau"), ("C15", "tau"), ("C16", "tau_att"),
])
def test_quadrature_agrees_with_monte_carlo(case, estimand):
    spec = get_case(case)
    value, se = mc_truth(spec, estimand, draws=2 * 10**6, seed=3)
    assert abs(value - spec.truth(estimand)) < 5 * se


def test_expect_against_closed_forms():
    assert expect(lambda a, b: a * a + b * b) == pytest.approx(2.0, abs=1e-10)
    assert expect(lambda a, b: np.exp(b)) == pytest.approx(math.exp(0.5), abs=1e-10)
    # E log|Z| = -(gamma + log 2) / 2
    assert expect(lambda a, b: np.log(np.abs(a))) == pytest.approx(-(np.euler_gamma + math.log(2)) / 2, abs=1e-8)


@pytest.mark.parametrize("case,shift", [("C7", 3.0), ("C8", -3.0)])
def test_shifted_sampling_score(case, shift):
    # (X1 + X2 + shift) / 2 = S / sqrt2 + shift / 2 with S ~ N(0, 1)
    oracle = _normal_expect(lambda s: expit(s / math.sqrt(2) + shift / 2))
    assert get_case(case).q_true() == pytest.approx(oracle, abs=1e-9)


class TestCatalogue:
    def test_all_cases_resolve(self):
        for cid in CASES:
            assert get_case(cid).case_id == cid

    def test_unknown_case(self):
        with pytest.raises(ValueError):
            get_case("C21")

    @pytest.mark.parametrize("pair,base", sorted(PAIR_OF.items()))
    def test_pairs_differ_only_in_target_propensity(self, pair, base):
        a, b = get_case(base), get_case(pair)
        assert b.e0_zero and not a.e0_zero
        x1, x2 = np.linspace(-2, 2, 9), np.linspace(1, -1, 9)
        np.testing.assert_array_equal(a.pi(x1, x2), b.pi(x1, x2))
        np.testing.assert_array_equal(a.e(x1, x2, 1), b.e(x1, x2, 1))
        np.testing.assert_array_equal(b.e(x1, x2, np.zeros(9)), 0.0)
        assert a.truth("tau") == pytest.approx(b.truth("tau"), rel=1e-12)


class TestSampling:
    def test_deterministic(self):
        d1, _ = dgp_generate(get_case("C2"), 300, 4)
        d2, _ = dgp_generate(get_case("C2"), 300, 4)
        np.testing.assert_array_equal(d1.y.data, d2.y.data)
        np.testing.assert_array_equal(d1.g, d2.g)

    def test_controls_only_pair_has_no_treated_target(self):
        d, _ = dgp_generate(get_case("C4"), 2000, 0)
        freq = ag_frequency(d)
        assert freq["A=1,G=0"] == 0 and freq["A=0,G=0"] > 0

    def test_group_and_treatment_frequencies(self):
        spec = get_case("C1")
        d, lat = dgp_generate(spec, 100_000, 1)
        assert d.g.mean() == pytest.approx(spec.q_true(), abs=0.01)
        src = d.g == 1
        assert d.a.data[src].mean() == pytest.approx(lat.e[src].mean(), abs=0.01)

    def test_potential_outcomes_match_means(self):
        spec = get_case("C3")
        d, lat = dgp_generate(spec, 100_000, 2)
        x1, x2 = d.x[:, 0], d.x[:, 1]
        resid = lat.y1 - spec.mu(x1, x2, 1, 1)
        assert resid.mean() == pytest.approx(0.0, abs=0.03)
        assert resid.std() == pytest.approx(2.0, rel=0.02)

    def test_target_noise_override(self):
        spec = get_case("C1", target_sigma0=0.5)
        d, lat = dgp_generate(spec, 50_000, 3)
        tgt = d.g == 0
        resid = lat.y0[tgt] - spec.mu(d.x[tgt, 0], d.x[tgt, 1], 0, 0)
        assert resid.std() == pytest.approx(0.5, rel=0.03)
        assert spec.ratio(0) == pytest.approx(16.0)

    def test_true_nuisance(self):
        spec = get_case("C1")
        d, lat = dgp_generate(spec, 50, 0)
        nu = true_nuisance(spec, d)
        np.testing.assert_allclose(nu.pi, lat.pi)
        np.testing.assert_array_equal(nu.r0, 1.0)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            dgp_generate(get_case("C1"), 0, 0)
