"""
wgbh command line: convergence studies for the weak Galerkin biharmonic solver.

    wgbh run --case bubble --mesh tri --n 4,8,16 --k 2 --out report.csv
    wgbh regress --report report.csv --baseline fixtures/bubble_tri.csv
    wgbh cases
"""
import argparse
import logging
import sys
from typing import List, Optional

from config.settings import settings
from data.baselines import load_baseline
from data.cases import cases_table
from services.convergence import (
    MESH_FAMILIES,
    REPORT_FORMATS,
    StudyConfig,
    emit,
    parse_report,
    regress,
    run_case,
)
from services.errors import ConfigError, WGError

logger = logging.getLogger("wgbh")

EXIT_OK = 0
EXIT_REGRESSION = 1
EXIT_RUNTIME = 2


def _levels(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=settings.APP_NAME,
                                     description="Weak Galerkin biharmonic convergence studies")
    parser.add_argument("--log-level", default=None, choices=settings.LOG_LEVELS)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="solve a manufactured case on a sequence of meshes")
    run.add_argument("--case", required=True)
    run.add_argument("--mesh", default="tri", choices=MESH_FAMILIES)
    run.add_argument("--n", type=_levels, default=[2, 4, 8], help="refinement levels, e.g. 2,4,8")
    run.add_argument("--k", type=int, default=2)
    run.add_argument("--out", default=None, help="report path (stdout when omitted)")
    run.add_argument("--format", default="csv", choices=REPORT_FORMATS)
    run.add_argument("--deterministic", action="store_true", help="write wall_ms as 0")
    run.add_argument("--mesh-file", action="append", default=[], help="mesh file, repeatable")
    run.add_argument("--solver", default=None, choices=settings.LINEAR_SOLVERS)
    run.add_argument("--no-condensation", action="store_true")
    run.add_argument("--fd-tangent", action="store_true",
                     help="use finite differences for the tangential boundary derivative")

    check = commands.add_parser("regress", help="compare a report with a baseline table")
    check.add_argument("--report", required=True)
    check.add_argument("--baseline", default=None)
    check.add_argument("--case", default=None)
    check.add_argument("--mesh", default=None, choices=MESH_FAMILIES)

    commands.add_parser("cases", help="list the built-in manufactured solutions")
    return parser


def _run(args: argparse.Namespace) -> int:
    mesh_family = "file" if args.mesh_file else args.mesh
    config = StudyConfig(
        case=args.case,
        mesh_family=mesh_family,
        refinements=args.n,
        k=args.k,
        output=args.out,
        format=args.format,
        deterministic=args.deterministic,
        mesh_files=args.mesh_file,
        use_condensation=not args.no_condensation,
        linear_solver=args.solver,
        analytic_tangent=not args.fd_tangent,
    )
    report = run_case(config)
    payload = emit(report, config.format)
    if config.output:
        with open(config.output, "wb") as handle:
            handle.write(payload)
        print(f"✅ Wrote {len(report)} rows to {config.output}")
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return EXIT_OK


def _regress(args: argparse.Namespace) -> int:
    report = parse_report(args.report)
    if args.baseline:
        baseline = parse_report(args.baseline)
    elif args.case and args.mesh:
        baseline = load_baseline(args.case, args.mesh)
    else:
        raise ConfigError("regress needs --baseline or both --case and --mesh")

    result = regress(report, baseline)
    if result.passed:
        print(f"✅ Regression passed ({result.compared} cells compared, {result.skipped} skipped)")
        return EXIT_OK
    if not result.diffs:
        print("❌ Regression failed: no cells could be compared")
    else:
        print(f"❌ Regression failed ({len(result.diffs)} of {result.compared} cells):")
        for diff in result.diffs:
            print(f"  - {diff}")
    return EXIT_REGRESSION


def _cases(args: argparse.Namespace) -> int:
    print(cases_table().to_string(index=False))
    return EXIT_OK


COMMANDS = {"run": _run, "regress": _regress, "cases": _cases}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    is_valid, problems = settings.validate()
    if not is_valid:
        print("❌ Configuration errors:")
        for problem in problems:
            print(f"  - {problem}")
        print(settings.get_error_message(problems))
        return EXIT_RUNTIME

    logging.basicConfig(level=args.log_level or settings.LOG_LEVEL,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (WGError, OSError) as exc:
        logger.error("%s", exc)
        print(f"❌ {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
