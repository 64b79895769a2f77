"""Parametric nuisance learners: least squares and IRLS logistic regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DegenerateLabelsError, InsufficientDataError


def with_intercept(x) -> np.ndarray:
    """Prepend a column of ones to a covariate matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(x.shape[0]), x])


@dataclass(frozen=True)
class LinearModelFit:
    coefficients: np.ndarray
    rank: int

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients


@dataclass(frozen=True)
class LogisticModelFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    separated: bool = False

    def predict(self, design) -> np.ndarray:
        return expit(np.asarray(design, dtype=float) @ self.coefficients)


def fit_linear(design, targets) -> LinearModelFit:
    """Ordinary least squares.

    Uses LAPACK's SVD-based ``lstsq`` so rank-deficient designs get the
    minimum-norm solution.

    Raises
    ------
    InsufficientDataError
        If there are fewer rows than columns.
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n, k = design.shape
    if n < k:
        raise InsufficientDataError(f"need at least {k} records for {k} coefficients, got {n}")
    coef, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    return LinearModelFit(coef, int(rank))


def logistic_score(design, labels, coef) -> np.ndarray:
    """Gradient of the Bernoulli log-likelihood, averaged over records."""
    design = np.asarray(design, dtype=float)
    return design.T @ (np.asarray(labels, float) - expit(design @ coef)) / design.shape[0]


def _loglik(design, labels, coef):
    eta = design @ coef
    return float(np.sum(labels * eta - np.logaddexp(0.0, eta)))


def fit_logistic(design, labels, tol: float = 1e-8, max_iter: int = 100, coef_cap: float = 30.0) -> LogisticModelFit:
    """Maximum-likelihood logistic regression by Newton/IRLS steps.

    Convergence means the max-norm of the averaged score falls below ``tol``.
    Iteration stops early, with ``converged=False``, once any coefficient
    exceeds ``coef_cap`` in absolute value (the data are (quasi-)separated);
    the best iterate by log-likelihood is returned in that case. A fit whose
    linear predictor classifies every record correctly is also reported as
    separated, since its tiny score reflects saturation, not an optimum.

    Raises
    ------
    DegenerateLabelsError
        If every label is identical.
    """
    design = np.asarray(design, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if labels.size == 0 or labels.min() == labels.max():
        raise DegenerateLabelsError("logistic regression needs both classes")
    n, k = design.shape
    coef = np.zeros(k)
    best, best_ll = coef.copy(), _loglik(design, labels, coef)
    for it in range(1, max_iter + 1):
        p = expit(design @ coef)
        w = p * (1.0 - p)
        grad = design.T @ (labels - p)
        hess = design.T @ (design * w[:, None])
        step, *_ = np.linalg.lstsq(hess, grad, rcond=None)
        coef = coef + step
        ll = _loglik(design, labels, coef)
        if not np.isfinite(ll):
            return LogisticModelFit(best, False, it, separated=True)
        if ll >= best_ll:
            best, best_ll = coef.copy(), ll
        if np.max(np.abs(coef)) > coef_cap:
            return LogisticModelFit(best, False, it, separated=True)
        if np.max(np.abs(logistic_score(design, labels, coef))) < tol:
            eta = design @ coef
            if np.all((eta > 0) == (labels == 1)) and np.all(eta != 0):
                # a separating direction: the score only vanishes numerically
                return LogisticModelFit(coef, False, it, separated=True)
            return LogisticModelFit(coef, True, it)
    return LogisticModelFit(best, False, max_iter)
