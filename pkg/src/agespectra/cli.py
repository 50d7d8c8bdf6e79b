"""Command-line entry point: ``agespectra {solve,sweep,criteria,simulate,verify}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import criteria, limits, simulate, spectral, verification
from .evolution import IntegrationError
from .io import dumps_report, load_scenario, rows_to_csv, to_jsonable
from .model import ScenarioError
from .validation import validate_assumptions

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class VerificationFailed(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="output path; JSON to stdout when omitted")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a scenario value after loading (repeatable)")
    common.add_argument("--strict", action="store_true", help="abort when a modelling assumption fails")
    common.add_argument("--seed", type=int, help="overrides solver.seed and SPECTRA_SEED")

    p = argparse.ArgumentParser(prog="agespectra", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="growth bounds and principal eigenfunction")
    s.add_argument("config")

    s = sub.add_parser("sweep", parents=[common], help="diffusion-rate or kernel-scale ladder")
    s.add_argument("config")
    s.add_argument("--param", choices=("D", "gamma"), required=True)
    s.add_argument("--values", required=True, help="comma-separated parameter values")
    s.add_argument("--m", type=float, default=None, help="dispersal cost exponent for gamma sweeps")
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    s = sub.add_parser("criteria", parents=[common], help="integrability criteria and nonexistence test")
    s.add_argument("config")

    s = sub.add_parser("simulate", parents=[common], help="time-step the model and fit the growth rate")
    s.add_argument("config")
    s.add_argument("--t-final", type=float, default=20.0)
    s.add_argument("--dt", type=float, default=None)

    s = sub.add_parser("verify", parents=[common], help="acceptance suite (full) or checks on one scenario (quick)")
    s.add_argument("config", nargs="?")
    s.add_argument("--suite", choices=("quick", "full"), default="full")
    s.add_argument("--only", help="comma-separated criterion numbers (full suite)")
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    return p


def _load(args):
    if not Path(args.config).exists():
        raise ScenarioError(f"config file not found: {args.config}")
    config = load_scenario(Path(args.config), overrides=args.overrides, seed_override=args.seed)
    for w in config.load_warnings:
        print(f"warning: {w}", file=sys.stderr)
    checks = validate_assumptions(config, strict=args.strict)
    for c in checks.failures:
        print(f"warning: assumption {c.name} fails ({c.detail})", file=sys.stderr)
    return config


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ScenarioError(f"cannot parse value list {text!r}") from None


def _emit(args, payload, csv_table=None, csv_suffix=".csv"):
    """JSON to ``-o`` (or stdout); a CSV companion next to it when given."""
    text = dumps_report(payload)
    if not args.output:
        sys.stdout.write(text)
        return
    out = Path(args.output)
    if out.suffix == ".csv" and csv_table is not None:
        out.write_text(rows_to_csv(*csv_table))
        out.with_suffix(".json").write_text(text)
        return
    out.write_text(text)
    if csv_table is not None:
        out.with_name(out.stem + csv_suffix).write_text(rows_to_csv(*csv_table))


def cmd_solve(args):
    config = _load(args)
    report = spectral.solve_spectral_bound(config)
    _emit(args, report, report.csv_rows(), "_eigenfunction.csv")


def cmd_sweep(args):
    config = _load(args)
    values = _floats(args.values)
    if args.param == "D":
        table = limits.sweep_diffusion_rate(config, values, jobs=args.jobs)
    else:
        m = config.kernel_spec.m if args.m is None else args.m
        table = limits.sweep_kernel_scaling(config, values, m, jobs=args.jobs)
    _emit(args, table, table.csv_rows())


def cmd_criteria(args):
    config = _load(args)
    out = {"criterion_I": criteria.check_criterion_I(config)}
    if config.rate_field.beta_cutoff_age is not None:
        out["criterion_II"] = criteria.check_criterion_II(config)
    out["nonexistence"] = criteria.detect_nonexistence(config)
    _emit(args, out)


def cmd_simulate(args):
    config = _load(args)
    est = simulate.estimate_growth_bound(config, args.t_final, args.dt)
    _emit(args, est, est.csv_rows(), "_trajectory.csv")


def cmd_verify(args):
    if args.suite == "quick":
        if not args.config:
            raise ScenarioError("the quick suite needs a config file")
        config = load_scenario(Path(args.config), overrides=args.overrides, seed_override=args.seed)
        report = verification.run_quick(config)
    else:
        seed = args.seed if args.seed is not None else int(os.environ.get("SPECTRA_SEED") or 0)
        only = [int(v) for v in args.only.split(",")] if args.only else None
        report = verification.run_acceptance(seed, only, jobs=args.jobs, progress=lambda r: print(r.line(), file=sys.stderr))
    if args.suite == "quick":
        verification.print_lines(report, sys.stderr)
    _emit(args, report, report.csv_rows())
    if not report.passed:
        failed = [r.name for r in report.results if not r.passed]
        raise VerificationFailed("failed: " + ", ".join(failed))


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "criteria": cmd_criteria, "simulate": cmd_simulate, "verify": cmd_verify}


def _fail(code, exc):
    print(json.dumps(to_jsonable({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), sort_keys=True),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except VerificationFailed as exc:
        return _fail(EXIT_VERIFY, exc)
    except (ScenarioError, OSError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (spectral.SpectralError, IntegrationError, simulate.SimulationError, ArithmeticError, ValueError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
