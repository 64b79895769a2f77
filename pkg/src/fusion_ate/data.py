"""Domain types, CSV ingestion and per-setting validation.

A :class:`StudyDataset` pools a source sample (``g == 1``, always complete)
with a target sample (``g == 0``) whose treatment and outcome columns may be
absent depending on the data structure in play.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateDatasetError, DataError, ParseError, SchemaError, ValidationError


class Structure(enum.Enum):
    """What the target sample carries, plus the assumption refinements."""

    X_ONLY = "X-only"
    XA = "XA"
    XY = "XY"
    XAY = "XAY"
    XAY_CONTROLS_ONLY = "XAY-controls-only"
    XAY_UNCONFOUNDED = "XAY-unconfounded"

    @property
    def needs_target_a(self) -> bool:
        return self in (Structure.XA, Structure.XAY, Structure.XAY_CONTROLS_ONLY, Structure.XAY_UNCONFOUNDED)

    @property
    def needs_target_y(self) -> bool:
        return self in (Structure.XY, Structure.XAY, Structure.XAY_CONTROLS_ONLY, Structure.XAY_UNCONFOUNDED)


ROMAN = {
    Structure.X_ONLY: "I",
    Structure.XA: "II",
    Structure.XY: "III",
    Structure.XAY: "IV",
    Structure.XAY_CONTROLS_ONLY: "V",
    Structure.XAY_UNCONFOUNDED: "VI",
}
STRUCTURE_BY_ROMAN = {v: k for k, v in ROMAN.items()}


# --------------------------------------------------------------------------
# drift functions


def _identity(u):
    return u


def _ones(u):
    return np.ones_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class DriftSpec:
    """Posterior-drift links ``psi_a`` with their derivatives ``m_a``.

    Use the factories :meth:`identity`, :meth:`linear` and :meth:`custom`
    rather than the constructor.
    """

    kind: str
    psi0: Callable = field(compare=False, repr=False)
    psi1: Callable = field(compare=False, repr=False)
    m0: Callable = field(compare=False, repr=False)
    m1: Callable = field(compare=False, repr=False)
    eps0: Optional[float] = None
    eps1: Optional[float] = None
    name: Optional[str] = None

    @classmethod
    def identity(cls) -> "DriftSpec":
        return cls("identity", _identity, _identity, _ones, _ones)

    @classmethod
    def linear(cls, eps0: float, eps1: Optional[float] = None) -> "DriftSpec":
        eps0 = float(eps0)
        eps1 = eps0 if eps1 is None else float(eps1)

        def psi0(u):
            return eps0 * np.asarray(u, dtype=float)

        def psi1(u):
            return eps1 * np.asarray(u, dtype=float)

        def m0(u):
            return np.full_like(np.asarray(u, dtype=float), eps0)

        def m1(u):
            return np.full_like(np.asarray(u, dtype=float), eps1)

        return cls("linear", psi0, psi1, m0, m1, eps0=eps0, eps1=eps1)

    @classmethod
    def custom(cls, psi0, m0, psi1, m1, name="custom") -> "DriftSpec":
        return cls("custom", psi0, psi1, m0, m1, name=name)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "linear":
            out.update(eps0=self.eps0, eps1=self.eps1)
        elif self.kind == "custom":
            out["name"] = self.name
        return out


def derivative_mismatch(drift: DriftSpec, grid, h: float = 1e-5) -> float:
    """Largest relative gap between ``m_a`` and a central difference of ``psi_a``."""
    u = np.asarray(grid, dtype=float)
    worst = 0.0
    for psi, m in ((drift.psi0, drift.m0), (drift.psi1, drift.m1)):
        fd = (np.asarray(psi(u + h), float) - np.asarray(psi(u - h), float)) / (2 * h)
        exact = np.asarray(m(u), float)
        scale = np.maximum(np.abs(exact), 1.0)
        worst = max(worst, float(np.max(np.abs(fd - exact) / scale)))
    return worst


# --------------------------------------------------------------------------
# settings


@dataclass(frozen=True)
class SettingSpec:
    structure: Structure
    drift: DriftSpec = field(default_factory=DriftSpec.identity)

    @property
    def starred(self) -> bool:
        return not self.drift.is_identity

    @property
    def roman(self) -> str:
        return ROMAN[self.structure]

    @property
    def label(self) -> str:
        return self.roman + ("*" if self.starred else "")

    @property
    def family(self) -> str:
        """Which EIF family governs the setting: 'I' (I-IV), 'V' or 'VI'."""
        if self.structure is Structure.XAY_CONTROLS_ONLY:
            return "V"
        if self.structure is Structure.XAY_UNCONFOUNDED:
            return "VI"
        return "I"

    def with_drift(self, drift: DriftSpec) -> "SettingSpec":
        return SettingSpec(self.structure, drift)

    def __str__(self):
        return self.label


def parse_setting(label: str, eps0: Optional[float] = None, eps1: Optional[float] = None) -> SettingSpec:
    """Parse ``"VI"`` or ``"VI*"``; a starred label needs ``eps0`` (linear drift)."""
    text = label.strip().upper()
    starred = text.endswith("*")
    roman = text.rstrip("*")
    if roman not in STRUCTURE_BY_ROMAN:
        raise ValueError(f"unknown setting {label!r}")
    structure = STRUCTURE_BY_ROMAN[roman]
    if not starred:
        return SettingSpec(structure)
    if eps0 is None:
        raise ValueError(f"setting {label} needs a drift (eps0/eps1)")
    return SettingSpec(structure, DriftSpec.linear(eps0, eps1))


# --------------------------------------------------------------------------
# records and datasets


@dataclass(frozen=True)
class SampleRecord:
    x: tuple
    a: Optional[int]
    y: Optional[float]
    g: int


def _masked(values, observed) -> np.ma.MaskedArray:
    arr = np.ma.MaskedArray(np.asarray(values, dtype=float), mask=~np.asarray(observed, dtype=bool))
    arr.data.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StudyDataset:
    """Pooled source + target sample.

    ``a`` and ``y`` are masked arrays: a masked entry is a missing value.
    Arrays are read-only once the dataset is built.
    """

    x: np.ndarray
    g: np.ndarray
    a: np.ma.MaskedArray
    y: np.ma.MaskedArray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        g = np.asarray(self.g).astype(np.int64)
        n = x.shape[0]
        if g.shape != (n,) or self.a.shape != (n,) or self.y.shape != (n,):
            raise SchemaError("x, a, y, g must share the record dimension")
        if not np.all((g == 0) | (g == 1)):
            raise SchemaError("g must be 0 or 1")
        if n == 0 or g.min() == g.max():
            raise DegenerateDatasetError("both the source (g=1) and target (g=0) samples must be non-empty")
        src = g == 1
        if np.any(np.ma.getmaskarray(self.a)[src]) or np.any(np.ma.getmaskarray(self.y)[src]):
            raise DataError("source records (g=1) must have both a and y")
        a_obs = ~np.ma.getmaskarray(self.a)
        if np.any((self.a.data[a_obs] != 0) & (self.a.data[a_obs] != 1)):
            raise SchemaError("a must be 0 or 1")
        x.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "g", g)

    @classmethod
    def from_arrays(cls, x, g, a=None, y=None, a_observed=None, y_observed=None) -> "StudyDataset":
        """Build from plain arrays; NaN in ``a``/``y`` (or the observed masks) marks missing."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and np.ndim(g) and len(g) > 1:
            x = x.T
        n = x.shape[0]
        a = np.full(n, np.nan) if a is None else np.asarray(a, dtype=float)
        y = np.full(n, np.nan) if y is None else np.asarray(y, dtype=float)
        a_observed = ~np.isnan(a) if a_observed is None else np.asarray(a_observed, bool)
        y_observed = ~np.isnan(y) if y_observed is None else np.asarray(y_observed, bool)
        return cls(x, g, _masked(np.where(a_observed, a, 0.0), a_observed), _masked(np.where(y_observed, y, 0.0), y_observed))

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord]) -> "StudyDataset":
        if not records:
            raise DegenerateDatasetError("no records")
        p = len(records[0].x)
        if any(len(r.x) != p for r in records):
            raise SchemaError("records do not share covariate dimension")
        x = np.array([r.x for r in records], dtype=float).reshape(len(records), p)
        g = np.array([r.g for r in records])
        a_obs = np.array([r.a is not None for r in records])
        y_obs = np.array([r.y is not None for r in records])
        a = np.array([0.0 if r.a is None else r.a for r in records])
        y = np.array([0.0 if r.y is None else r.y for r in records])
        return cls(x, g, _masked(a, a_obs), _masked(y, y_obs))

    # --- views -----------------------------------------------------------

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q_hat(self) -> float:
        return float(np.count_nonzero(self.g == 1)) / self.n

    @property
    def a_observed(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.a)

    @property
    def y_observed(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.y)

    def records(self) -> list[SampleRecord]:
        a_obs, y_obs = self.a_observed, self.y_observed
        return [
            SampleRecord(
                tuple(float(v) for v in self.x[i]),
                int(self.a.data[i]) if a_obs[i] else None,
                float(self.y.data[i]) if y_obs[i] else None,
                int(self.g[i]),
            )
            for i in range(self.n)
        ]

    def take(self, idx) -> "StudyDataset":
        idx = np.asarray(idx)
        return StudyDataset(
            self.x[idx],
            self.g[idx],
            _masked(self.a.data[idx], self.a_observed[idx]),
            _masked(self.y.data[idx], self.y_observed[idx]),
        )

    def standardized(self) -> "StudyDataset":
        """Covariates rescaled to zero mean / unit variance with pooled moments."""
        sd = self.x.std(axis=0)
        sd[sd == 0] = 1.0
        z = (self.x - self.x.mean(axis=0)) / sd
        return StudyDataset(z, self.g, self.a, self.y)

    def equals(self, other: "StudyDataset") -> bool:
        """Bitwise equality on every field, including missingness."""
        return (
            self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.g, other.g)
            and np.array_equal(self.a_observed, other.a_observed)
            and np.array_equal(self.y_observed, other.y_observed)
            and np.array_equal(self.a.data[self.a_observed], other.a.data[other.a_observed])
            and np.array_equal(self.y.data[self.y_observed], other.y.data[other.y_observed])
        )


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    rule: str
    indices: list


def validate_dataset(d: StudyDataset, s: SettingSpec) -> list[Violation]:
    """Return the violations of ``s``'s data requirements (empty list: valid).

    Extra target columns are allowed: a dataset valid for a richer structure is
    valid for every poorer one.
    """
    target = d.g == 0
    out = []
    if s.structure.needs_target_a:
        bad = np.flatnonzero(target & ~d.a_observed)
        if bad.size:
            out.append(Violation(f"{s.structure.value} requires target treatment", bad.tolist()))
    if s.structure.needs_target_y:
        bad = np.flatnonzero(target & ~d.y_observed)
        if bad.size:
            out.append(Violation(f"{s.structure.value} requires target outcome", bad.tolist()))
    if s.structure is Structure.XAY_CONTROLS_ONLY:
        bad = np.flatnonzero(target & d.a_observed & (d.a.data == 1))
        if bad.size:
            out.append(Violation("controls-only: no treated units in the target data", bad.tolist()))
    return out


def require_valid(d: StudyDataset, s: SettingSpec) -> None:
    violations = validate_dataset(d, s)
    if violations:
        raise ValidationError(violations)


# --------------------------------------------------------------------------
# CSV I/O


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping; the default reads ``x1..xp, a, y, g``."""

    x: Optional[tuple] = None
    a: str = "a"
    y: str = "y"
    g: str = "g"

    @classmethod
    def from_json(cls, path) -> "CsvSchema":
        spec = json.loads(Path(path).read_text())
        x = spec.get("x")
        return cls(tuple(x) if x is not None else None, spec.get("a", "a"), spec.get("y", "y"), spec.get("g", "g"))


_X_COL = re.compile(r"^x(\d+)$")


def _resolve_x(header, schema):
    if schema.x is not None:
        missing = [c for c in schema.x if c not in header]
        if missing:
            raise SchemaError(f"missing covariate columns {missing}")
        return list(schema.x)
    found = sorted(((int(m.group(1)), c) for c in header if (m := _X_COL.match(c))), key=lambda t: t[0])
    if not found:
        raise SchemaError("no covariate columns x1..xp")
    idx = [i for i, _ in found]
    if idx != list(range(1, len(idx) + 1)):
        raise SchemaError(f"covariate columns must be x1..x{len(idx)} without gaps")
    return [c for _, c in found]


def _parse_float(text, line, col):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"column {col!r}: not a number: {text!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"column {col!r}: non-finite value", line)
    return v


def load_csv(path, schema: Optional[CsvSchema] = None) -> StudyDataset:
    """Read a pooled dataset; blank ``a``/``y`` cells are missing values."""
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file") from None
        xcols = _resolve_x(header, schema)
        for col in (schema.g,):
            if col not in header:
                raise SchemaError(f"missing column {col!r}")
        pos = {c: i for i, c in enumerate(header)}
        xi = [pos[c] for c in xcols]
        ai, yi, gi = pos.get(schema.a), pos.get(schema.y), pos[schema.g]
        xs, gs, avals, aobs, yvals, yobs = [], [], [], [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            xs.append([_parse_float(row[i], line, header[i]) for i in xi])
            gtext = row[gi].strip()
            if gtext not in ("0", "1"):
                raise ParseError(f"g must be 0 or 1, got {gtext!r}", line)
            gs.append(int(gtext))
            for idx, col, vals, obs in ((ai, schema.a, avals, aobs), (yi, schema.y, yvals, yobs)):
                cell = row[idx].strip() if idx is not None else ""
                if cell == "":
                    vals.append(0.0)
                    obs.append(False)
                else:
                    v = _parse_float(cell, line, col)
                    if col == schema.a and v not in (0.0, 1.0):
                        raise ParseError(f"a must be 0 or 1, got {cell!r}", line)
                    vals.append(v)
                    obs.append(True)
    if not gs:
        raise DegenerateDatasetError("file has no records")
    x = np.array(xs, dtype=float).reshape(len(gs), len(xcols))
    return StudyDataset(x, np.array(gs), _masked(avals, aobs), _masked(yvals, yobs))


def save_csv(d: StudyDataset, path) -> None:
    """Write ``x1..xp,a,y,g`` with shortest round-trip float formatting."""
    a_obs, y_obs = d.a_observed, d.y_observed
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(d.p)] + ["a", "y", "g"])
        for i in range(d.n):
            w.writerow(
                [repr(float(v)) for v in d.x[i]]
                + [str(int(d.a.data[i])) if a_obs[i] else "", repr(float(d.y.data[i])) if y_obs[i] else "", str(int(d.g[i]))]
            )


# --------------------------------------------------------------------------
# reports


@dataclass
class EstimateReport:
    estimand: str
    setting: str
    point: float
    variance: float
    ci_low: float
    ci_high: float
    n: int
    diagnostics: dict = field(default_factory=dict)
    method: str = "wald"

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "setting": self.setting,
            "point": self.point,
            "variance": self.variance,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n": self.n,
            "diagnostics": self.diagnostics,
        }

    CSV_FIELDS = ("estimand", "setting", "point", "variance", "ci_low", "ci_high", "n",
                  "mean_centered_eif", "clip_fraction", "nuisance_method")

    def csv_row(self) -> list:
        diag = self.diagnostics
        return [self.estimand, self.setting, repr(self.point), repr(self.variance), repr(self.ci_low),
                repr(self.ci_high), self.n, repr(diag.get("mean_centered_eif")), repr(diag.get("clip_fraction")),
                diag.get("nuisance_method")]

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def wald_interval(point: float, variance: float, z: float = 1.96) -> tuple[float, float]:
    half = z * math.sqrt(max(variance, 0.0))
    return point - half, point + half


def iter_rows(reports: Iterable[EstimateReport]):
    yield list(EstimateReport.CSV_FIELDS)
    for r in reports:
        yield r.csv_row()
