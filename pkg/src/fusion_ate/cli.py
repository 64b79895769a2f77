"""Command-line front end: ``fusion-ate {estimate,simulate,sweep,bounds}``.

Every output file starts with a header carrying the resolved configuration,
the seed and the library version. The wall-clock time sits in one field
(``timestamp``) so two runs of the same configuration can be compared byte
for byte once that field is masked.

Exit codes: 0 success, 2 configuration error, 3 data or validation error,
4 numerical failure, 5 ordering violation in ``bounds --strict``.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import CsvSchema, SettingSpec, Structure, iter_rows, load_csv, parse_setting, require_valid
from .eif import bootstrap_ci
from .errors import ContextIncompleteError, DataError, NotIdentifiableError, NumericalError
from .estimands import ESTIMANDS
from .nuisance.crossfit import cross_fit, load_nuisance_csv, save_nuisance_csv
from .nuisance.forest import ForestParams
from .recipe import EstimationRecipe, estimate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_ORDERING = 0, 2, 3, 4, 5


class ConfigError(Exception):
    """Invalid combination of options."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _split(values):
    out = []
    for v in values or []:
        out.extend(p.strip() for p in v.split(",") if p.strip())
    return out


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _header(config: dict) -> dict:
    return {"tool": "fusion-ate", "version": __version__, "seed": config.get("seed"),
            "config": config, "timestamp": _timestamp()}


def _csv_text(header: dict, rows) -> str:
    buf = io.StringIO()
    for key in ("tool", "version", "seed"):
        buf.write(f"# {key}: {header[key]}\n")
    buf.write(f"# config: {json.dumps(header['config'], sort_keys=True)}\n")
    for line in header.get("extra", []):
        buf.write(f"# {line}\n")
    buf.write(f"# timestamp: {header['timestamp']}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _emit(path: Optional[str], text: str):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _settings(labels, eps0, eps1) -> list[SettingSpec]:
    try:
        return [parse_setting(lab, eps0, eps1) for lab in labels]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _forest_params(args) -> ForestParams:
    if getattr(args, "forest_style", "bagged") == "honest":
        return ForestParams.honest_subsampled(n_trees=args.n_trees)
    return ForestParams(n_trees=args.n_trees)


def _fit_setting(settings: list[SettingSpec]) -> SettingSpec:
    rank = {Structure.X_ONLY: 0, Structure.XA: 1, Structure.XY: 1, Structure.XAY: 2,
            Structure.XAY_CONTROLS_ONLY: 3, Structure.XAY_UNCONFOUNDED: 4}
    structure = max((s.structure for s in settings), key=rank.__getitem__)
    starred = next((s.drift for s in settings if s.starred), None)
    return SettingSpec(structure, starred) if starred else SettingSpec(structure)


# --------------------------------------------------------------------------
# estimate


def cmd_estimate(args) -> int:
    labels = _split(args.setting) or ["I"]
    estimands = _split(args.estimand) or ["tau"]
    for e in estimands:
        if e not in ESTIMANDS:
            raise ConfigError(f"unknown estimand {e!r}")
    settings = _settings(labels, args.eps0, args.eps1)
    if 0 < args.bootstrap < 100 or args.bootstrap < 0:
        raise ConfigError("--bootstrap needs at least 100 resamples")
    if args.bootstrap and args.nuisance_file:
        raise ConfigError("--bootstrap refits nuisances and cannot be combined with --nuisance-file")
    schema = CsvSchema.from_json(args.schema) if args.schema else None
    d = load_csv(args.input, schema)
    for s in settings:
        require_valid(d, s)

    fit_setting = _fit_setting(settings)
    if args.nuisance_file:
        nu = load_nuisance_csv(args.nuisance_file)
        if nu.n != d.n:
            raise DataError(f"nuisance file has {nu.n} rows, dataset has {d.n}")
    else:
        nu = cross_fit(d, fit_setting, method=args.method, k=args.k, seed=args.seed, delta=args.delta,
                       pooled_mu=args.pooled_mu, forest_params=_forest_params(args))
    if args.dump_nuisance:
        save_nuisance_csv(nu, args.dump_nuisance)

    reports = []
    for s in settings:
        surface = nu
        if s.structure is Structure.XAY_CONTROLS_ONLY and nu.e0 is not None:
            surface = nu.replace(e0=np.zeros(nu.n))
        for e in estimands:
            rep = estimate(d, s, surface, e, known_pi=args.known_pi)
            if args.bootstrap:
                recipe = EstimationRecipe(s, estimand=e, method=args.method, k=args.k, seed=args.seed,
                                          delta=args.delta, pooled_mu=args.pooled_mu, known_pi=args.known_pi,
                                          forest_params=_forest_params(args))
                lo, hi = bootstrap_ci(d, recipe, B=args.bootstrap, seed=args.seed)
                rep.diagnostics["bootstrap_ci"] = [lo, hi]
                rep.diagnostics["bootstrap_B"] = args.bootstrap
            reports.append(rep)

    config = _config(args, setting=labels, estimand=estimands)
    header = _header(config)
    doc = dict(header)
    doc["reports"] = [r.to_dict() for r in reports]
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        stem = Path(args.output)
        json_path = stem if stem.suffix == ".json" else stem.with_suffix(".json")
        json_path.write_text(text)
        json_path.with_suffix(".csv").write_text(_csv_text(header, iter_rows(reports)))
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate


def _study_config(path) -> list[dict]:
    raw = json.loads(Path(path).read_text())
    items = raw if isinstance(raw, list) else [raw]
    allowed = {"case", "setting", "n", "reps", "method", "seed", "estimand"}
    for item in items:
        extra = set(item) - allowed
        if extra:
            raise ConfigError(f"unknown study-config keys {sorted(extra)}")
        if "case" not in item:
            raise ConfigError("study config needs 'case'")
    return items


def cmd_simulate(args) -> int:
    from .lab.dgp import get_case
    from .lab.study import mc_study

    if args.config:
        studies = _study_config(args.config)
    else:
        cases = _split(args.case)
        if not cases:
            raise ConfigError("simulate needs --case or --config")
        studies = [{"case": c} for c in cases]
    rows = [["case", "estimator", "n", "Bias", "SD", "CP95"]]
    resolved = []
    for st in studies:
        item = {
            "case": st["case"],
            "setting": _split([st["setting"]] if isinstance(st.get("setting"), str) else st.get("setting"))
            or _split(args.setting) or ["I"],
            "n": int(st.get("n", args.n)),
            "reps": int(st.get("reps", args.reps)),
            "method": st.get("method", args.method),
            "seed": int(st.get("seed", args.seed)),
            "estimand": st.get("estimand", args.estimand),
        }
        resolved.append(item)
        try:
            spec = get_case(item["case"])
        except ValueError as exc:
            raise ConfigError(f"unknown case {item['case']!r}") from exc
        settings = _settings(item["setting"], args.eps0 if args.eps0 is not None else spec.eps0,
                             args.eps1 if args.eps1 is not None else spec.eps1)
        out = mc_study(spec, settings, item["n"], item["reps"], method=item["method"], seed=item["seed"],
                       estimand=item["estimand"], k=args.k, workers=args.workers,
                       forest_params=_forest_params(args), known_pi=args.known_pi)
        for s in settings:
            m = out[s.label]
            r = m.row()
            rows.append([r["case"], r["estimator"], r["n"], _fmt(r["Bias"]), _fmt(r["SD"]), _fmt(r["CP95"])])
    config = _config(args, studies=resolved)
    config.pop("workers", None)  # never changes output values
    _emit(args.output, _csv_text(_header(config), rows))
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


def _parse_grid(text: str) -> list[float]:
    text = text.strip()
    if ":" in text:
        lo, hi, step = (float(t) for t in text.split(":"))
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad grid {text!r}")
        count = int(round((hi - lo) / step)) + 1
        return [round(lo + i * step, 10) for i in range(count)]
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_sweep(args) -> int:
    from .sensitivity import epsilon_grid, epsilon_range, sensitivity_sweep

    if bool(args.input) == bool(args.case):
        raise ConfigError("sweep needs exactly one of --input and --case")
    if args.input:
        schema = CsvSchema.from_json(args.schema) if args.schema else None
        d = load_csv(args.input, schema)
    else:
        from .lab.dgp import dgp_generate, get_case

        try:
            spec = get_case(args.case)
        except ValueError as exc:
            raise ConfigError(f"unknown case {args.case!r}") from exc
        d, _ = dgp_generate(spec, args.n, args.seed)
    labels = _split(args.setting) or ["I"]
    eps_range = None
    try:
        eps_range = epsilon_range(d, method=args.method, seed=args.seed, forest_params=_forest_params(args))
    except DataError:
        if not args.eps_grid:
            raise
    if args.eps_grid:
        values = _parse_grid(args.eps_grid)
    else:
        values = [p[0] for p in epsilon_grid(*eps_range, step=args.step)]
    grid = [(v0, v1) for v0 in values for v1 in values] if args.untied else [(v, v) for v in values]
    res = sensitivity_sweep(d, labels[0], grid, method=args.method, seed=args.seed, settings=labels[1:],
                            estimand=args.estimand, k=args.k, forest_params=_forest_params(args),
                            eps_range=eps_range, workers=args.workers)
    rows = [["eps0", "eps1", "setting", "point", "ci_low", "ci_high"]]
    for r in res.rows():
        rows.append([_fmt(r["eps0"]), _fmt(r["eps1"]), r["setting"], _fmt(r["point"]),
                     _fmt(r["ci_low"]), _fmt(r["ci_high"])])
    config = _config(args, setting=labels)
    config.pop("workers", None)
    header = _header(config)
    header["extra"] = [f"eps_range: {json.dumps(list(eps_range) if eps_range else None)}",
                       f"nuisance_checksum: {res.nuisance_checksum}"]
    _emit(args.output, _csv_text(header, rows))
    return EXIT_OK


# --------------------------------------------------------------------------
# bounds


def cmd_bounds(args) -> int:
    from .lab.bounds import compare_bounds

    cases = _split(args.case) or ["C1"]
    rows = [["setting", "case", "bound", "mc_se"]]
    checks = []
    violated = False
    for fam in cases:
        try:
            rep = compare_bounds(fam, n_mc=args.n_mc, seed=args.seed, drift=args.drift)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for r in rep.rows():
            rows.append([r["setting"], r["case"], _fmt(r["bound"]), _fmt(r["mc_se"])])
        for c in rep.checks:
            checks.append(f"check {rep.family} | {c.name} | {c.kind} | {c.status} | "
                          f"lhs={c.lhs!r} rhs={c.rhs!r} se={c.se!r}")
        violated = violated or bool(rep.violations)
    config = _config(args, case=cases)
    header = _header(config)
    header["extra"] = checks
    _emit(args.output, _csv_text(header, rows))
    if violated and args.strict:
        return EXIT_ORDERING
    return EXIT_OK


# --------------------------------------------------------------------------
# wiring


_CONFIG_SKIP = {"func", "command_fn"}


def _config(args, **resolved) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _CONFIG_SKIP}
    cfg.update(resolved)
    return cfg


def _common(p, workers=False):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default=None, help="output path (default: stdout)")
    p.add_argument("--method", choices=("parametric", "forest"), default="parametric")
    p.add_argument("--k", type=int, default=4, help="cross-fitting folds")
    p.add_argument("--n-trees", type=int, default=ForestParams().n_trees)
    p.add_argument("--forest-style", choices=("bagged", "honest"), default="bagged",
                   help="bootstrap-bagged trees, or half-sample honest trees")
    p.add_argument("--eps0", type=float, default=None, help="linear drift for starred settings")
    p.add_argument("--eps1", type=float, default=None)
    if workers:
        from .lab.study import default_workers

        p.add_argument("--workers", type=int, default=default_workers(),
                       help="parallel workers (default: FUSION_ATE_WORKERS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusion-ate", description="Target-population treatment effects from two datasets.")
    parser.add_argument("--version", action="version", version=f"fusion-ate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate from a CSV file")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--schema", default=None, help="JSON column mapping")
    p.add_argument("--setting", action="append", help="setting label(s), e.g. I,VI or V*")
    p.add_argument("--estimand", action="append", help=f"one or more of {', '.join(ESTIMANDS)}")
    p.add_argument("--delta", type=float, default=0.01, help="probability clipping threshold")
    p.add_argument("--known-pi", action="store_true")
    p.add_argument("--pooled-mu", action="store_true")
    p.add_argument("--dump-nuisance", default=None, metavar="PATH")
    p.add_argument("--nuisance-file", default=None, metavar="PATH")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo study on a built-in design")
    p.add_argument("--case", action="append")
    p.add_argument("--config", default=None, help="study-config JSON")
    p.add_argument("--setting", "--settings", dest="setting", action="append")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--estimand", choices=ESTIMANDS, default="tau")
    p.add_argument("--known-pi", action="store_true")
    _common(p, workers=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sensitivity sweep over linear drift")
    p.add_argument("--input", "-i", default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--case", default=None, help="simulate data from a design instead of --input")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--setting", "--settings", dest="setting", action="append")
    p.add_argument("--eps-grid", default=None, help="'lo:hi:step' or comma list (default: empirical range)")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--untied", action="store_true", help="grid over eps0 x eps1")
    p.add_argument("--estimand", choices=("tau", "beta"), default="tau")
    _common(p, workers=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="Monte Carlo efficiency bounds and their orderings")
    p.add_argument("--case", action="append", help="base design(s), e.g. C1")
    p.add_argument("--n-mc", type=int, default=10**6)
    p.add_argument("--drift", type=float, default=None)
    p.add_argument("--strict", action="store_true", help="exit 5 on any ordering violation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"fusion-ate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotIdentifiableError, ContextIncompleteError) as exc:
        print(f"fusion-ate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"fusion-ate: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"fusion-ate: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"fusion-ate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
