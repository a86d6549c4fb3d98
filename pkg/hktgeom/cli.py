# hktgeom - Command Line Interface
# verify <scenario> runs the declared suites; list-builtins prints the built-in scenario names

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import config
from .exceptions import ScenarioError
from .scenarios import BUILTINS, builtin_names, load_scenario
from .schemas import NumericConfig
from .suites import render, run_suites
from .utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='hktgeom', description='Numerical verification of HKT/QKT geometry scenarios.')
    commands = parser.add_subparsers(dest='command', required=True)

    verify = commands.add_parser('verify', help='run the suites of a scenario and print the report')
    verify.add_argument('scenario', help='built-in scenario name or path to a scenario file')
    verify.add_argument('--order', type=int, help='jet order (default 4)')
    verify.add_argument('--points', type=int, help='number of sample points')
    verify.add_argument('--seed', type=int, help='sampling seed')
    verify.add_argument('--tolerance-scale', type=float, dest='tolerance_scale', help='multiplier on every tolerance')
    verify.add_argument('--report', type=Path, help='also write the report to this path')
    verify.add_argument('--format', choices=('text', 'structured'), default=config.REPORT_FORMAT)
    verify.add_argument('--log-level', default=config.LOG_LEVEL, dest='log_level')

    commands.add_parser('list-builtins', help='print the built-in scenario names')
    return parser


def numeric_overrides(base: NumericConfig, args: argparse.Namespace) -> NumericConfig:
    """Scenario [numeric] values, then command-line flags."""
    updates = {key: getattr(args, key) for key in ('order', 'points', 'seed', 'tolerance_scale')
               if getattr(args, key, None) is not None}
    return NumericConfig(**{**base.model_dump(), **updates})


def list_builtins() -> int:
    for name in builtin_names():
        summary = BUILTINS[name].splitlines()[0].lstrip('# ')
        print(f"{name}\t{summary}".rstrip())
    return EXIT_PASS


def verify(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
        numeric = numeric_overrides(scenario.numeric, args)
    except ScenarioError as error:
        logger.error(f"cannot load {args.scenario}: {error}")
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as error:
        print(f"error: invalid numeric option: {error}", file=sys.stderr)
        return EXIT_USAGE

    report = run_suites(scenario, numeric)
    output = render(report, args.format)
    sys.stdout.write(output)
    if args.report is not None:
        args.report.parent.mkdir(parents=True, exist_ok=True)
        args.report.write_text(output, encoding='utf-8')
        logger.info(f"report written to {args.report}")
    return EXIT_PASS if report.passed else EXIT_FAIL


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(getattr(args, 'log_level', None))
    if args.command == 'list-builtins':
        return list_builtins()
    return verify(args)


if __name__ == '__main__':
    sys.exit(main())
