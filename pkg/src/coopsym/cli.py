"""Command line entry point.

Usage:
    coopsym report --config exp_stable_ball --out runs/exp
    coopsym solve --config scenarios/my.yaml --grid 64x128
    coopsym branch --config lane_emden_offdiag --out runs/le
    coopsym verify spectral_props --tol-override eps_eig_rel=1e-8

``--config`` takes a YAML file or the name of a bundled scenario.  Exit
status: 0 when every assertion passes, 1 when a stage or an assertion
fails (the partial report is still written), 2 for configuration errors
(no report).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import DEFAULT, ConfigurationError
from .scenario import (bundled_scenarios, dump_report, load_scenario, parse_grid_override,
                       parse_tol_overrides, run_scenario, write_report)


def _common(p: argparse.ArgumentParser, config: bool = True):
    if config:
        p.add_argument("--config", required=True,
                       help="scenario YAML file or bundled scenario name")
    p.add_argument("--out", type=Path, default=None,
                   help="output directory for report.json and CSV fields")
    p.add_argument("--grid", default=None, help="override the resolution, e.g. 64x128")
    p.add_argument("--tol-override", action="append", default=[], metavar="KEY=VALUE",
                   help="override one tolerance (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="no summary on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopsym",
        description="Solve cooperative elliptic systems on discs and annuli and check "
                    "their spectral and symmetry properties.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("solve", help="seed and Newton solve only"))
    _common(sub.add_parser("branch", help="run the scenario's continuation stage"))
    _common(sub.add_parser("report", help="run the whole pipeline"))
    v = sub.add_parser("verify", help="run a named property suite")
    v.add_argument("suite", help="spectral_props, mp_props, reflection_props or endtoend_symmetry")
    _common(v, config=False)
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _summary(report: dict) -> str:
    lines = [f"scenario {report['scenario']['name']}"] if "scenario" in report else []
    for stage in report.get("stages", []):
        lines.append(f"  stage {stage['stage']:<10s} {stage['status']}")
    for a in report["assertions"]:
        mark = "PASS" if a["passed"] else "FAIL"
        lines.append(f"  [{mark}] {a['name']}" + (f"  ({a['detail']})" if a["detail"] else ""))
    lines.append("passed" if report["passed"] else "FAILED")
    return "\n".join(lines)


def _emit(report: dict, args) -> int:
    if args.out is not None:
        write_report(report, args.out / "report.json")
    elif args.command == "report" and not args.quiet:
        print(dump_report(report))
        return 0 if report["passed"] else 1
    if not args.quiet:
        print(_summary(report))
    return 0 if report["passed"] else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        for name in bundled_scenarios():
            print(name)
        return 0
    try:
        grid = parse_grid_override(args.grid) if args.grid else None
        tols = parse_tol_overrides(args.tol_override)
        if args.command == "verify":
            from .suites import suite_report
            report = suite_report(args.suite, DEFAULT.override(tols), grid)
            return _emit(report, args)
        sc = load_scenario(args.config, grid, tols)
        names = [n for n, _ in sc.pipeline]
        only = None
        if args.command == "solve":
            only = ("solve",)
            if "solve" not in names:
                sc.pipeline.insert(0, ("solve", {}))
        elif args.command == "branch":
            if "branch" not in names:
                raise ConfigurationError(f"scenario {sc.name!r} has no branch stage")
            only = ("solve", "branch") if names.index("branch") > 0 else ("branch",)
        report, _ = run_scenario(sc, args.out, only)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return _emit(report, args)


if __name__ == "__main__":
    sys.exit(main())
