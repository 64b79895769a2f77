"""Parametric learners checked against independent solvers."""
import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from fusion_ate.errors import DegenerateLabelsError, InsufficientDataError
from fusion_ate.nuisance.models import fit_linear, fit_logistic, logistic_score, with_intercept


def test_with_intercept_shapes():
    assert with_intercept(np.arange(3.0)).shape == (3, 2)
    np.testing.assert_array_equal(with_intercept(np.zeros((4, 2)))[:, 0], np.ones(4))


def test_linear_matches_statsmodels(rng):
    x = rng.standard_normal((200, 3))
    y = 1 + x @ np.array([2.0, -1.0, 0.5]) + rng.standard_normal(200)
    ours = fit_linear(with_intercept(x), y).coefficients
    ref = sm.OLS(y, sm.add_constant(x)).fit().params
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


def test_linear_exact_recovery():
    x = np.linspace(-1, 1, 7)
    fit = fit_linear(with_intercept(x), 3 - 2 * x)
    np.testing.assert_allclose(fit.coefficients, [3, -2], atol=1e-12)
    assert fit.rank == 2


def test_linear_rank_deficient_is_min_norm():
    x = np.column_stack([np.arange(5.0), np.arange(5.0)])
    fit = fit_linear(with_intercept(x), 2 * np.arange(5.0))
    assert fit.rank == 2
    np.testing.assert_allclose(fit.coefficients[1:], [1.0, 1.0], atol=1e-10)


def test_linear_too_few_rows():
    with pytest.raises(InsufficientDataError):
        fit_linear(np.ones((2, 3)), np.ones(2))


def test_logistic_matches_statsmodels(rng):
    x = rng.standard_normal((500, 2))
    p = 1 / (1 + np.exp(-(0.3 + x @ np.array([1.0, -0.7]))))
    y = (rng.uniform(size=500) < p).astype(float)
    fit = fit_logistic(with_intercept(x), y)
    ref = sm.Logit(y, sm.add_constant(x)).fit(disp=0, tol=1e-12).params
    assert fit.converged and not fit.separated
    np.testing.assert_allclose(fit.coefficients, ref, rtol=1e-7, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_logistic_score_vanishes_at_optimum(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((120, 2))
    y = (rng.uniform(size=120) < 1 / (1 + np.exp(-x[:, 0]))).astype(float)
    y[:2] = [0.0, 1.0]
    fit = fit_logistic(with_intercept(x), y)
    if fit.converged:
        assert np.max(np.abs(logistic_score(with_intercept(x), y, fit.coefficients))) < 1e-8


def test_logistic_separated_data_flagged():
    x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
    y = (x > 0).astype(float)
    fit = fit_logistic(with_intercept(x), y)
    assert fit.separated and not fit.converged
    p = fit.predict(with_intercept(x))
    assert np.all(np.isfinite(p))
    assert np.all((p > 0.5) == (y == 1))


def test_logistic_single_class():
    with pytest.raises(DegenerateLabelsError):
        fit_logistic(with_intercept(np.arange(4.0)), np.ones(4))


def test_logistic_predictions_are_probabilities(rng):
    x = rng.standard_normal((50, 1))
    y = (x[:, 0] + rng.standard_normal(50) > 0).astype(float)
    p = fit_logistic(with_intercept(x), y).predict(with_intercept(rng.standard_normal((20, 1)) * 10))
    assert np.all((p >= 0) & (p <= 1))
