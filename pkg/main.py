#!/usr/bin/env python3
"""
frame-forge command line

This script runs the frame-forge experiments end to end:
- Running a JSON experiment config (surgery, Gabor, SIS, sampling, multiplier)
- Writing CSV tables and a JSON manifest per run
- Running the built-in invariant self-test
- Printing the experiment config schema
"""

import argparse
import json
import logging
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / 'src'))

from grid_core import ConfigError, FrameForgeError
from experiment_runner import ExperimentRunner, SelfTest, config_schema, load_config


def print_run_summary(result):
    """Print outputs, warnings and errors of a run"""
    print(f"\n📄 Outputs:")
    for path in result.outputs:
        print(f"   • {path}")

    if result.fitted:
        print(f"\n📈 Fitted constants:")
        for key, value in result.fitted.items():
            print(f"   {key}: {value}")

    if result.warnings:
        print(f"   ⚠️  Warnings: {len(result.warnings)}")
        for warning in result.warnings[:3]:  # Show first 3 warnings
            print(f"      • {warning}")
        if len(result.warnings) > 3:
            print(f"      ... and {len(result.warnings) - 3} more")

    if result.errors:
        print(f"   ❌ Errors: {len(result.errors)}")
        for error in result.errors:
            print(f"      • {error}")


def run_config(config_path: str, output: str = None, verbose: bool = False) -> int:
    """Run one experiment config"""
    print(f"🧮 Running experiment: {config_path}")

    try:
        config = load_config(config_path)
        if output:
            config.output = output
        runner = ExperimentRunner(log_level=logging.DEBUG if verbose else logging.INFO)
        result = runner.run(config)
    except ConfigError as e:
        print(f"❌ Invalid configuration: {e}")
        return 1
    except FrameForgeError as e:
        print(f"❌ Error: {e}")
        return 1

    print_run_summary(result)
    if result.exit_code == 0:
        print(f"\n✅ Experiment complete!")
    elif result.exit_code == 2:
        print(f"\n❌ Certification refused")
    return result.exit_code


def run_selftest() -> int:
    """Run the invariant self-test"""
    print(f"🔎 Running self-test...")
    report = SelfTest().run()
    for line in report.lines():
        print(f"   {line}")

    if report.passed:
        print(f"\n✅ All {len(report.checks)} checks passed")
        return 0
    failed = sum(not check.passed for check in report.checks)
    print(f"\n❌ {failed} of {len(report.checks)} checks failed")
    return 1


def main(argv=None):
    """Main function"""
    parser = argparse.ArgumentParser(
        prog="frame-forge",
        description="frame-forge - quilted frames, Gabor systems and sampling at desk scale",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  frame-forge run configs/surgery_sweep.json
  frame-forge run configs/multiplier.json --output results/multiplier --verbose
  frame-forge selftest
  frame-forge schema

Environment:
  FRAME_FORGE_THREADS   worker threads for sweeps and resolvent solves (default 1)
        """
    )

    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Show debug logging"
    )

    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Run an experiment config")
    run_parser.add_argument("config", help="JSON experiment config")
    run_parser.add_argument("--output", "-o", help="Output directory (overrides the config)")

    commands.add_parser("selftest", help="Run the invariant self-test")
    commands.add_parser("schema", help="Print the experiment config schema as JSON")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "schema":
        print(json.dumps(config_schema(), indent=2))
        return 0

    if args.command == "selftest":
        return run_selftest()

    # Check if file exists
    if not Path(args.config).exists():
        print(f"❌ File not found: {args.config}")
        return 1

    return run_config(args.config, output=args.output, verbose=args.verbose)


if __name__ == "__main__":
    sys.exit(main())
