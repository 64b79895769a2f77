"""Cross-fitted nuisance surfaces.

Every nuisance is a regression of one column on ``x`` within a subpopulation:

=========  ===========================  ==========
nuisance   training records             target
=========  ===========================  ==========
pi         all                          g
e1         g = 1                        a
e0         g = 0 (when a is recorded)   a
mu_a       g = 1, a                     y
r_a        see :func:`fit_variance_ratio`
=========  ===========================  ==========
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..data import SettingSpec, StudyDataset, Structure
from ..errors import (
    DegenerateLabelsError,
    FoldStarvationError,
    InsufficientDataError,
    ParseError,
    RatioUnavailable,
)
from .forest import ForestParams, fit_forest, oob_predict
from .models import fit_linear, fit_logistic, with_intercept

METHODS = ("parametric", "forest")


@dataclass(frozen=True, eq=False)
class NuisanceSurface:
    """Per-record nuisance values.

    ``e0`` is ``None`` when the data structure carries no target treatment
    and the setting does not force it to zero.
    """

    pi: np.ndarray
    e1: np.ndarray
    e0: Optional[np.ndarray]
    mu0: np.ndarray
    mu1: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    fold_id: np.ndarray
    method: str = "parametric"
    clip_fraction: float = 0.0
    notes: tuple = ()

    def __post_init__(self):
        for name in ("pi", "e1", "e0", "mu0", "mu1", "r0", "r1", "fold_id"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=np.int64 if name == "fold_id" else float)
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    def replace(self, **kw) -> "NuisanceSurface":
        return replace(self, **kw)

    def take(self, idx) -> "NuisanceSurface":
        idx = np.asarray(idx)
        return replace(
            self,
            **{k: (getattr(self, k)[idx] if getattr(self, k) is not None else None)
               for k in ("pi", "e1", "e0", "mu0", "mu1", "r0", "r1", "fold_id")},
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in ("pi", "e1", "e0", "mu0", "mu1", "r0", "r1", "fold_id"):
            v = getattr(self, name)
            h.update(name.encode())
            h.update(b"none" if v is None else np.ascontiguousarray(v).tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# learners


def _fit_regression(method, x, y, seed, params):
    if method == "parametric":
        fit = fit_linear(with_intercept(x), y)
        return lambda z: fit.predict(with_intercept(z))
    f = fit_forest(x, y, params, seed=seed, task="regression")
    return f.predict


def _fit_probability(method, x, labels, seed, params):
    if method == "parametric":
        fit = fit_logistic(with_intercept(x), labels)
        return lambda z: fit.predict(with_intercept(z))
    f = fit_forest(x, labels, params, seed=seed, task="classification")
    return f.predict


def _seed(seed, fold, slot):
    return int(np.random.SeedSequence([seed, fold, slot]).generate_state(1)[0] % (2**31 - 1))


def _residual_variance_model(method, x, y, seed, params, floor):
    """Fit a mean, then regress squared residuals on ``x``; returns v(x)."""
    n = x.shape[0]
    if method == "parametric":
        if n < x.shape[1] + 2:
            raise RatioUnavailable(f"only {n} records")
        mean = fit_linear(with_intercept(x), y)
        res2 = (y - mean.predict(with_intercept(x))) ** 2
        var = fit_linear(with_intercept(x), res2)
        lo = floor * max(float(np.mean(res2)), 1e-12)
        return lambda z: np.maximum(var.predict(with_intercept(z)), lo)
    if n < params.min_records():
        raise RatioUnavailable(f"only {n} records")
    mean = fit_forest(x, y, params, seed=seed)
    fitted = oob_predict(mean, x)
    fitted = np.where(np.isnan(fitted), mean.predict(x), fitted)
    res2 = (y - fitted) ** 2
    var = fit_forest(x, res2, params, seed=seed + 1)
    lo = floor * max(float(np.mean(res2)), 1e-12)
    return lambda z: np.maximum(var.predict(z), lo)


def _ratio(d, train, pred, arm, method, seed, params, r_floor, r_cap):
    a, y_obs = d.a, d.y_observed
    a_obs = d.a_observed
    src = train[(d.g[train] == 1) & (a.data[train] == arm)]
    tgt = train[(d.g[train] == 0) & a_obs[train] & y_obs[train] & (a.data[train] == arm)]
    if src.size == 0 or tgt.size == 0:
        raise RatioUnavailable(f"arm {arm}: empty {'source' if src.size == 0 else 'target'} subpopulation")
    v1 = _residual_variance_model(method, d.x[src], d.y.data[src], seed, params, 1e-3)
    v0 = _residual_variance_model(method, d.x[tgt], d.y.data[tgt], seed + 7, params, 1e-3)
    z = d.x[pred]
    return np.clip(v1(z) / v0(z), r_floor, r_cap)


def fit_variance_ratio(d: StudyDataset, a: int, method: str = "parametric", k: int = 4, seed: int = 0,
                       crossfit: Optional[bool] = None, forest_params: Optional[ForestParams] = None,
                       r_floor: float = 0.05, r_cap: float = 20.0) -> np.ndarray:
    """Estimate the baseline variance ratio ``r_a(x)`` for arm ``a``.

    In each group ``g`` the arm's own conditional mean is fitted on the
    ``(A=a, G=g)`` records and the squared residuals are regressed on ``x``
    (out-of-bag residuals for forests). The ratio source/target is clipped to
    ``[r_floor, r_cap]``.

    Raises
    ------
    RatioUnavailable
        If either group has no records in arm ``a``; callers substitute 1.
    """
    params = forest_params or ForestParams()
    crossfit = (method == "forest") if crossfit is None else crossfit
    folds = _folds(d.n, k, seed) if crossfit else np.zeros(d.n, dtype=np.int64)
    out = np.empty(d.n)
    for f in np.unique(folds):
        pred = np.flatnonzero(folds == f)
        train = np.flatnonzero(folds != f) if crossfit else np.arange(d.n)
        out[pred] = _ratio(d, train, pred, a, method, _seed(seed, int(f), 10 + a), params, r_floor, r_cap)
    return out


# --------------------------------------------------------------------------
# cross-fitting


def _folds(n, k, seed):
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError("k cannot exceed the number of records")
    perm = np.random.default_rng(np.random.SeedSequence([seed])).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def _clip(p, delta):
    clipped = (p < delta) | (p > 1 - delta)
    return np.clip(p, delta, 1 - delta), int(np.count_nonzero(clipped))


def cross_fit(d: StudyDataset, s: SettingSpec, method: str = "parametric", k: int = 4, seed: int = 0,
              delta: float = 0.01, crossfit: Optional[bool] = None, pooled_mu: bool = False,
              ratios: Optional[bool] = None, forest_params: Optional[ForestParams] = None,
              r_floor: float = 0.05, r_cap: float = 20.0) -> NuisanceSurface:
    """Fit every nuisance ``s`` needs and predict it at every record.

    Parameters
    ----------
    method : {"parametric", "forest"}
        Linear/logistic regressions or bagged CART ensembles.
    crossfit : bool, optional
        Defaults to False for parametric fits (one fit on the full
        subpopulation) and True for forests. With ``crossfit=True`` record i's
        values come from models trained without record i's fold.
    pooled_mu : bool
        Fit ``mu_a`` on arm-``a`` records from both datasets (needs target
        treatment and outcome).
    ratios : bool, optional
        Fit the variance ratios; defaults to whether ``s`` carries drift.
        Unfitted ratios are 1.

    Raises
    ------
    FoldStarvationError
        If some training set lacks the records a nuisance needs.
    """
    if method not in METHODS:
        raise ValueError(f"unknown nuisance method {method!r}")
    params = forest_params or ForestParams()
    crossfit = (method == "forest") if crossfit is None else crossfit
    ratios = s.starred if ratios is None else ratios
    st = s.structure
    has_target_ay = st.needs_target_a and st.needs_target_y
    if pooled_mu and not has_target_ay:
        raise ValueError("pooled_mu needs target treatment and outcome")

    n = d.n
    folds = _folds(n, k, seed) if crossfit else np.zeros(n, dtype=np.int64)
    g, a_obs, y_obs = d.g, d.a_observed, d.y_observed
    a = d.a.data
    out = {name: np.empty(n) for name in ("pi", "e1", "mu0", "mu1", "r0", "r1")}
    fit_e0 = st.needs_target_a and st is not Structure.XAY_CONTROLS_ONLY
    e0 = np.empty(n) if fit_e0 else (np.zeros(n) if st is Structure.XAY_CONTROLS_ONLY else None)
    notes = set()

    for f in np.unique(folds):
        fold = int(f) if crossfit else None
        pred = np.flatnonzero(folds == f)
        train = np.flatnonzero(folds != f) if crossfit else np.arange(n)
        z = d.x[pred]

        def fit(kind, rows, target, slot, name):
            if rows.size == 0:
                raise FoldStarvationError(name, fold)
            try:
                learner = _fit_probability if kind == "prob" else _fit_regression
                return learner(method, d.x[rows], target, _seed(seed, int(f), slot), params)(z)
            except (InsufficientDataError, DegenerateLabelsError, ValueError) as exc:
                raise FoldStarvationError(name, fold) from exc

        out["pi"][pred] = fit("prob", train, g[train].astype(float), 0, "all records (pi)")
        src = train[g[train] == 1]
        out["e1"][pred] = fit("prob", src, a[src], 1, "g=1 (e1)")
        if fit_e0:
            tgt = train[(g[train] == 0) & a_obs[train]]
            labels = a[tgt]
            if tgt.size and labels.min() == labels.max():
                # every training target unit in one arm: the boundary MLE is that constant
                e0[pred] = labels[0]
                notes.add(f"e0 constant {labels[0]:g} (single-class target treatment)")
            else:
                e0[pred] = fit("prob", tgt, labels, 2, "g=0 with a (e0)")
        for arm in (0, 1):
            if pooled_mu:
                rows = train[a_obs[train] & y_obs[train] & (a[train] == arm)]
                label = f"a={arm} pooled (mu{arm})"
            else:
                rows = train[(g[train] == 1) & (a[train] == arm)]
                label = f"g=1, a={arm} (mu{arm})"
            out[f"mu{arm}"][pred] = fit("reg", rows, d.y.data[rows], 3 + arm, label)
            if ratios and has_target_ay:
                try:
                    out[f"r{arm}"][pred] = _ratio(d, train, pred, arm, method, _seed(seed, int(f), 10 + arm),
                                                  params, r_floor, r_cap)
                except RatioUnavailable:
                    out[f"r{arm}"][pred] = 1.0
                    notes.add(f"r{arm} unavailable, set to 1")
            else:
                out[f"r{arm}"][pred] = 1.0

    clipped = 0
    total = 0
    out["pi"], c = _clip(out["pi"], delta)
    clipped, total = clipped + c, total + n
    out["e1"], c = _clip(out["e1"], delta)
    clipped, total = clipped + c, total + n
    if fit_e0:
        constant = np.isin(e0, (0.0, 1.0))
        e0c, c = _clip(e0, delta)
        e0 = np.where(constant, e0, e0c)
        clipped, total = clipped + c - int(np.count_nonzero(constant)), total + n
    return NuisanceSurface(
        out["pi"], out["e1"], e0, out["mu0"], out["mu1"], out["r0"], out["r1"], folds,
        method=method, clip_fraction=clipped / total, notes=tuple(sorted(notes)),
    )


# --------------------------------------------------------------------------
# audit CSV

_COLUMNS = ("fold_id", "pi_hat", "e0_hat", "e1_hat", "mu0_hat", "mu1_hat", "r0_hat", "r1_hat")
_FIELDS = ("fold_id", "pi", "e0", "e1", "mu0", "mu1", "r0", "r1")


def save_nuisance_csv(surface: NuisanceSurface, path) -> None:
    """One row per record; ``e0_hat`` blank when the surface has no e0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# method={surface.method} clip_fraction={surface.clip_fraction!r}\n")
        for note in surface.notes:
            fh.write(f"# note: {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_COLUMNS)
        cols = [getattr(surface, f) for f in _FIELDS]
        for i in range(surface.n):
            w.writerow([
                str(int(c[i])) if f == "fold_id" else ("" if c is None else repr(float(c[i])))
                for f, c in zip(_FIELDS, cols)
            ])


def load_nuisance_csv(path) -> NuisanceSurface:
    meta = {}
    notes = []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# note: "):
            notes.append(line[len("# note: "):])
        elif line.startswith("#"):
            for part in line[1:].split():
                key, _, val = part.partition("=")
                meta[key] = val
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != _COLUMNS:
        raise ParseError(f"nuisance file header must be {','.join(_COLUMNS)}", 1)
    for row in reader:
        rows.append(row)
    cols = {f: [] for f in _FIELDS}
    e0_blank = False
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(_COLUMNS):
            raise ParseError(f"expected {len(_COLUMNS)} fields", lineno)
        try:
            for f, cell in zip(_FIELDS, row):
                if f == "e0" and cell == "":
                    e0_blank = True
                    continue
                cols[f].append(int(cell) if f == "fold_id" else float(cell))
        except ValueError:
            raise ParseError("not a number", lineno) from None
    e0 = None if e0_blank else np.array(cols["e0"])
    return NuisanceSurface(
        np.array(cols["pi"]), np.array(cols["e1"]), e0, np.array(cols["mu0"]), np.array(cols["mu1"]),
        np.array(cols["r0"]), np.array(cols["r1"]), np.array(cols["fold_id"], dtype=np.int64),
        method=meta.get("method", "parametric"), clip_fraction=float(meta.get("clip_fraction", 0.0)),
        notes=tuple(notes),
    )
