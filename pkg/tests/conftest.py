from __future__ import annotations

import numpy as np
import pytest

from fusion_ate.data import StudyDataset
from fusion_ate.nuisance.crossfit import NuisanceSurface


def random_dataset(n, rng, target_treated=True, target_ay=True, p=2):
    """Pooled dataset with random covariates, groups, treatments and outcomes."""
    x = rng.standard_normal((n, p))
    g = rng.integers(0, 2, n)
    g[0], g[1] = 0, 1
    a = rng.integers(0, 2, n).astype(float)
    if not target_treated:
        a[g == 0] = 0.0
    y = rng.normal(1.0, 2.0, n)
    if not target_ay:
        a[g == 0] = np.nan
        y[g == 0] = np.nan
    return StudyDataset.from_arrays(x, g, a, y)


def random_surface(n, rng, e0=True, pi=None, e0_value=None, r=None):
    """Nuisance surface with values drawn away from the boundary."""
    unif = lambda: rng.uniform(0.05, 0.95, n)  # noqa: E731
    e0_arr = None
    if e0:
        e0_arr = np.full(n, e0_value, dtype=float) if e0_value is not None else unif()
    r0 = rng.uniform(0.3, 3.0, n) if r is None else np.full(n, float(r))
    r1 = rng.uniform(0.3, 3.0, n) if r is None else np.full(n, float(r))
    return NuisanceSurface(
        pi=unif() if pi is None else np.full(n, float(pi)),
        e1=unif(), e0=e0_arr,
        mu0=rng.normal(0, 3, n), mu1=rng.normal(1, 3, n),
        r0=r0, r1=r1, fold_id=np.zeros(n, dtype=np.int64), method="synthetic",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# One line per acceptance criterion, filled in by test_acceptance.py and
# printed in the terminal summary so the verdicts survive output capture.
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
