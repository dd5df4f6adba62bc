"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 usage or model configuration
error, 3 input/output error (unreadable or corrupt files).

Tolerance overrides are read from the environment:

``RUINLEVY_RENEWAL_STEP``   renewal grid step (default 0.005)
``RUINLEVY_RENEWAL_TOL``    ruin probability left at the grid end (default 1e-6)
``RUINLEVY_TAIL_TOL``       tilted mass allowed beyond the grid (default 1e-4)
``RUINLEVY_THRESHOLDS``     JSON file of validation thresholds
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, GridError, RuinLevyError, UnsupportedModel, AdmissibilityError
from .fluctuation import (DEFAULT_STEP, DEFAULT_TAIL_TOL, DEFAULT_TOL, RenewalTable, phi_hat, renewal_table)
from .limitlaw import (EDPF, decomposition_sampler, edpf_limit, overshoot_limit, ruin_time_limit, undershoot_limits,
                       w0_law)
from .model import build_model, constants
from .simulate import RunningSupMGF, conditioned_ensemble, running_sup_mgf, simulate_paths
from . import validate

LIMIT_CHOICES = ("overshoot", "undershoot", "max-undershoot", "w0", "ruin-time", "running-sup")


class UsageError(Exception):
    pass


def _env_float(name, default):
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"{name} must be a number, got {raw!r}") from None


def _load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return raw, build_model(raw)


def _table(m, args):
    if getattr(args, "table", None):
        try:
            loaded = RenewalTable.from_csv(args.table)
        except (ValueError, IndexError) as exc:
            raise OSError(f"corrupt renewal table {args.table}: {exc}") from None
        return loaded
    return renewal_table(m, h=_env_float("RUINLEVY_RENEWAL_STEP", DEFAULT_STEP),
                         tol=_env_float("RUINLEVY_RENEWAL_TOL", DEFAULT_TOL),
                         tail_tol=_env_float("RUINLEVY_TAIL_TOL", DEFAULT_TAIL_TOL))


def _meta(m, args, **extra):
    out = {"config_hash": m.config_hash(), "seed": args.seed, "version": __version__}
    out.update(extra)
    return out


def _emit(args, name, text):
    """Write to ``--out/name`` when an output directory is given, else stdout."""
    if args.out:
        target = Path(args.out)
        target.mkdir(parents=True, exist_ok=True)
        with open(target / name, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=validate._jsonable) + "\n"


def _csv_text(write, *a, **kw):
    import io

    buf = io.StringIO()
    write(buf, *a, **kw)
    return buf.getvalue()


def _g17(v):
    return format(float(v), ".17g")


def cmd_constants(args):
    _, m = _load_config(args.config)
    payload = {"constants": {k: float(v) for k, v in constants(m).as_dict().items()},
               "phi_hat": {_g17(a): phi_hat(m, a) for a in args.phi_hat}, "meta": _meta(m, args)}
    _emit(args, "constants.json", _dump(payload))
    return 0


def cmd_ruin_prob(args):
    _, m = _load_config(args.config)
    if any(u < 0 for u in args.u):
        raise UsageError("levels must be >= 0")
    table = _table(m, args)
    lines = [f"# {k}={v}" for k, v in sorted(_meta(m, args).items())] + ["u,ruin_probability"]
    lines += [f"{_g17(u)},{_g17(table.ruin_probability(u))}" for u in args.u]
    _emit(args, "ruin_probability.csv", "\n".join(lines) + "\n")
    if args.save_table:
        table.to_csv(args.save_table, meta=_meta(m, args))
    return 0


def cmd_simulate(args):
    _, m = _load_config(args.config)
    if args.u <= 0:
        raise UsageError("--u must be > 0")
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    if args.conditioned:
        samples, report = conditioned_ensemble(m, args.u, args.n, cutoff=args.cutoff, seed=args.seed,
                                               method=args.method, workers=args.workers)
        rep = report.as_dict()
    else:
        samples, events = simulate_paths(m, args.u, args.n, args.seed, workers=args.workers)
        rep = {"n_attempted": args.n, "n_ruined": int(samples.ruined.sum()), "events": int(events),
               "u": args.u, "seed": args.seed, "method": "unconditioned"}
    meta = _meta(m, args, u=_g17(args.u), n=args.n)
    _emit(args, "paths.csv", samples.to_csv_string(meta))
    if args.out:
        rep["meta"] = meta
        _emit(args, "ensemble_report.json", _dump(rep))
    return 0


def _parse_grid(text):
    """``start:stop:count`` or a comma-separated list."""
    try:
        if ":" in text:
            a, b, k = text.split(":")
            return np.linspace(float(a), float(b), int(k))
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"bad grid {text!r}; use start:stop:count or v1,v2,...") from None


def cmd_limits(args):
    _, m = _load_config(args.config)
    if args.which not in LIMIT_CHOICES:
        raise UsageError(f"unknown --which {args.which!r}; choose from {', '.join(LIMIT_CHOICES)}")
    grid = _parse_grid(args.grid)
    meta = _meta(m, args, which=args.which)
    if args.which == "running-sup":
        if grid[0] != 0:
            raise UsageError("running-sup grid must start at 0")
        est = running_sup_mgf(m, grid, args.n, seed=args.seed, table=_table(m, args), workers=args.workers)
        _emit(args, "running_sup.csv", _csv_text(est.to_csv, meta=meta))
        return 0
    if args.which == "ruin-time":
        if not args.running_sup:
            raise UsageError("--which ruin-time needs --running-sup FILE; create one with "
                             "`ruinlevy limits --which running-sup --grid 0:40:2001 --out DIR`")
        with open(args.running_sup) as fh:
            try:
                est = RunningSupMGF.from_csv(fh)
            except ValueError as exc:
                raise OSError(f"corrupt running-sup file: {exc}") from None
        law = ruin_time_limit(m, est)
        if grid.max() > est.t[-1]:
            raise GridError(f"grid exceeds running-sup range [0, {est.t[-1]}]")
    elif args.which == "overshoot":
        law = overshoot_limit(m)
    elif args.which == "w0":
        law = w0_law(m, _table(m, args))
    else:
        under, maxu = undershoot_limits(m)
        law = under if args.which == "undershoot" else maxu
    _emit(args, f"{args.which}.csv", _csv_text(law.to_csv, grid, meta=meta))
    return 0


def _parse_params(pairs):
    out = {}
    for item in pairs:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"parameter {item!r} must look like name=value")
        try:
            out[key] = float(val)
        except ValueError:
            raise UsageError(f"parameter {key} must be numeric") from None
    return out


def cmd_edpf(args):
    _, m = _load_config(args.config)
    if args.name not in EDPF:
        raise UsageError(f"unknown transform {args.name!r}; choose from {', '.join(sorted(EDPF))}")
    params = _parse_params(args.param)
    value = edpf_limit(m, args.name, **params)
    _emit(args, "edpf.json", _dump({"name": args.name, "params": params, "value": value, "meta": _meta(m, args)}))
    return 0


def cmd_sample_limit(args):
    _, m = _load_config(args.config)
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    samples = decomposition_sampler(m, args.n, seed=args.seed, table=_table(m, args), method=args.method,
                                    workers=args.workers)
    _emit(args, "decomposition.csv", _csv_text(samples.to_csv, meta=_meta(m, args, n=args.n)))
    return 0


def _thresholds(args):
    path = args.thresholds or os.environ.get("RUINLEVY_THRESHOLDS")
    return validate.Thresholds.from_json(path) if path else validate.Thresholds()


def cmd_validate(args):
    _, m = _load_config(args.config)
    th = _thresholds(args)
    table = _table(m, args) if m.sigma == 0 else None
    reports = []
    if args.suite in ("identities", "all"):
        reports += validate.identity_suite(m, th, seed=args.seed, pk_n=args.pk_n, workers=args.workers, table=table)
    if args.suite in ("limits", "all"):
        reports += validate.marginal_limit_suite(m, args.levels, args.n, seed=args.seed, thresholds=th,
                                                 workers=args.workers, sup_n=args.sup_n)
        for eta in args.eta:
            reports.append(validate.transform_compare(m, max(args.levels), args.zeta, eta, args.n, seed=args.seed,
                                                      thresholds=th, workers=args.workers))
    meta = _meta(m, args, suite=args.suite)
    if args.out:
        _emit(args, "validation.json", validate.reports_to_json(reports, meta))
        _emit(args, "validation.md", validate.reports_to_markdown(reports, meta))
    else:
        sys.stdout.write(validate.reports_to_json(reports, meta) + "\n")
    ident_ok, asym_ok, underpowered = validate.summarize(reports)
    if underpowered:
        print("warning: some comparisons are underpowered; raise --n", file=sys.stderr)
    if not asym_ok:
        print("warning: asymptotic comparisons outside slack (finite-u effect or bug)", file=sys.stderr)
    if not ident_ok or (args.strict and not asym_ok):
        return 1
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="model JSON file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", default=None, help="output directory (default: stdout)")
    common.add_argument("--table", default=None, help="renewal table CSV to reuse instead of solving")

    p = argparse.ArgumentParser(prog="ruinlevy", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("constants", parents=[common], help="fluctuation constants as JSON")
    s.add_argument("--phi-hat", type=float, nargs="*", default=[], metavar="A")
    s.set_defaults(func=cmd_constants)

    s = sub.add_parser("ruin-prob", parents=[common], help="exact ruin probability")
    s.add_argument("--u", type=float, nargs="+", required=True)
    s.add_argument("--save-table", default=None, help="also write the renewal table CSV here")
    s.set_defaults(func=cmd_ruin_prob)

    s = sub.add_parser("simulate", parents=[common], help="first-passage paths as CSV")
    s.add_argument("--u", type=float, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--conditioned", action="store_true", help="collect n ruined paths instead of n paths")
    s.add_argument("--method", choices=("auto", "rejection", "exact"), default="auto")
    s.add_argument("--cutoff", type=float, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("limits", parents=[common], help="limit-law evaluations as CSV")
    s.add_argument("--which", required=True, help=" | ".join(LIMIT_CHOICES))
    s.add_argument("--grid", default="0:10:101")
    s.add_argument("--running-sup", default=None, help="CSV from --which running-sup")
    s.add_argument("--n", type=int, default=10 ** 5, help="paths for --which running-sup")
    s.set_defaults(func=cmd_limits)

    s = sub.add_parser("edpf", parents=[common], help="closed-form transform limit")
    s.add_argument("--name", required=True, help=" | ".join(sorted(EDPF)))
    s.add_argument("--param", nargs="*", action="extend", default=[], metavar="NAME=VALUE")
    s.set_defaults(func=cmd_edpf)

    s = sub.add_parser("sample-limit", parents=[common], help="limiting path decomposition samples")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--method", choices=("exact", "rejection"), default="exact")
    s.set_defaults(func=cmd_sample_limit)

    s = sub.add_parser("validate", parents=[common], help="identity and limit suites")
    s.add_argument("--suite", choices=("identities", "limits", "all"), default="identities")
    s.add_argument("--levels", type=float, nargs="+", default=[4.0, 8.0])
    s.add_argument("--n", type=int, default=5000, help="ruined paths per level")
    s.add_argument("--pk-n", type=int, default=10 ** 6, help="paths per level for the ruin-formula check")
    s.add_argument("--sup-n", type=int, default=10 ** 5, help="paths for the running-sup estimate")
    s.add_argument("--zeta", type=float, default=0.5)
    s.add_argument("--eta", type=float, nargs="*", default=[0.2, -0.3])
    s.add_argument("--thresholds", default=None, help="JSON threshold overrides")
    s.add_argument("--strict", action="store_true", help="exit 1 on asymptotic failures too")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        return args.func(args)
    except (UsageError, ConfigError, DomainError, GridError, UnsupportedModel, AdmissibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except RuinLevyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
