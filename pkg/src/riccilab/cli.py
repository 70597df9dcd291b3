"""Command-line front end.

Exit codes: 0 all checks passed, 2 configuration error, 3 a check failed,
4 numerical breakdown (singular metric, extinction, rejected step).
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import SCENARIOS, load_config, parse_config
from .errors import (
    ConfigError,
    ExtinctionReached,
    InvariantViolation,
    IoError,
    ScenarioFailure,
    SingularMetric,
    StepRejected,
    ToleranceExceeded,
    UnstableConstant,
    WindowEmpty,
)
from .report import emit_report
from .scenarios import run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_NUMERICAL = 4

CHECK_ERRORS = (ScenarioFailure, ToleranceExceeded, InvariantViolation, UnstableConstant, WindowEmpty)
NUMERICAL_ERRORS = (SingularMetric, ExtinctionReached, StepRejected)


def build_parser():
    parser = argparse.ArgumentParser(prog="riccilab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="scenario", required=True, metavar="SCENARIO")
    for name in SCENARIOS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="key = value scenario file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--resolution", type=int, metavar="N")
        p.add_argument("--sigma", type=float)
        p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    return parser


def resolve_config(args):
    overrides = {k: getattr(args, k) for k in ("seed", "out", "resolution", "sigma")}
    if args.config is None:
        return parse_config("", overrides, args.scenario)
    return load_config(args.config, overrides, args.scenario)


def run(args):
    cfg = resolve_config(args)
    report = run_scenario(cfg)
    meta = {"config": {k: v for k, v in cfg.to_dict().items() if k != "out"}, "version": __version__}
    emit_report([report], cfg.out, meta, figures=not args.no_figures)
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}")
    if not report.passed:
        failed = report.failures()
        raise ScenarioFailure(failed[0] if failed else "no checks run",
                              f"{len(failed)} of {len(report.checks)} checks failed")
    print(f"all {len(report.checks)} checks passed; artifacts in {cfg.out}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CHECK_ERRORS as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except NUMERICAL_ERRORS as exc:
        print(f"numerical breakdown: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IoError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
