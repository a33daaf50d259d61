import argparse
import logging
import sys
from typing import List, Optional

from config import AppInfo, CLIConstants
from utils import ConfigError, setup_logger, set_console_level

logger = setup_logger("vmtorus", AppInfo.LOG_FILE)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=AppInfo.APP_NAME, description=AppInfo.DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"{AppInfo.APP_NAME} {AppInfo.VERSION}")
    parser.add_argument("subcommand", choices=CLIConstants.SUBCOMMANDS)
    parser.add_argument("--config", help="JSON run config laid over the defaults and the preset")
    parser.add_argument("--out", default="out", help="output directory for report.json and artifacts")
    parser.add_argument("--threads", type=_positive_int, default=1)
    parser.add_argument("--seed-override", type=int, default=None)
    parser.add_argument("--verbose", action="store_true", help="log progress to the console")
    parser.add_argument("--profile", default=None, help="preset name (default: the active preset)")
    parser.add_argument("--profiles-file", default=CLIConstants.PROFILES_FILE)
    parser.add_argument("--case", choices=["gcc", "strip"], default=None,
                        help="reference case for reference-build and absorb-run")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_console_level(logging.INFO)

    try:
        from config import ExperimentProfilesManager, RunConfigManager
        from core import ExperimentRunner, exit_code

        profiles = ExperimentProfilesManager(args.profiles_file)
        if args.profile and not profiles.has_profile(args.subcommand, args.profile):
            raise ConfigError("--profile", f"no preset '{args.profile}' for {args.subcommand}")
        preset = profiles.get_profile(args.subcommand, args.profile)
        config = RunConfigManager(args.config, preset, args.seed_override).load()

        report = ExperimentRunner(config, args.out, args.threads, args.case).run(args.subcommand)
        for name, criterion in report.criteria.items():
            print(f"{'PASS' if criterion['passed'] else 'FAIL'}  {name}: {criterion['value']}")
        if report.error is not None:
            print(f"ERROR {report.error['type']}: {report.error['message']}", file=sys.stderr)
        return exit_code(report)

    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"config error: {e}", file=sys.stderr)
        return CLIConstants.EXIT_CONFIG

    except Exception as e:
        logger.critical(f"Fatal error in {args.subcommand}: {e}", exc_info=True)
        print(f"fatal: {e}", file=sys.stderr)
        return CLIConstants.EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
