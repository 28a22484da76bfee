"""
Command-line entry point: `python -m src.main <command> [flags]`.
"""
import argparse
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from src import __version__
from src.cli import analysis, data, experiment, model
from src.core.config import command_overrides, load_experiment_config
from src.core.errors import ConfigurationError
from src.core.logging import EXIT_OK, CommandAuditor, install_error_handlers, set_log_level
from src.services.report_service import ReportService

COMMAND_MODULES = [data, model, analysis, experiment]


def common_arguments() -> argparse.ArgumentParser:
    """Flags shared by every command"""
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("common")
    group.add_argument("--seed", type=int, default=0, help="Seed for every random choice")
    group.add_argument("--threads", type=int, default=None, help="Worker cap (default: LARE_THREADS, then CPU count)")
    group.add_argument("--config", type=Path, default=None, help="TOML experiment config; its values override flags")
    group.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    group.add_argument("--plots", action="store_true", help="Also write PNG plots next to the TSV tables")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="larex",
        description="Normalized linear autoencoder recommenders: fitting, evaluation and diagnostics",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    parents = [common_arguments()]
    for module in COMMAND_MODULES:
        module.register(subparsers, parents)
    return parser


def _command_parser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise ConfigurationError(f"unknown command '{command}'")


def apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """
    Overlay `--config` values onto parsed flags.

    String values go through the flag's own type conversion; lists and
    numbers are taken as they are.

    Raises:
        ConfigurationError: Unknown key or a value the flag rejects
    """
    if args.config is None:
        return
    config = load_experiment_config(args.config)
    section = config.get(args.command, {})
    section_keys = {key.replace("-", "_") for key in section} if isinstance(section, dict) else set()
    overrides = command_overrides(config, args.command)
    actions = {action.dest: action for action in _command_parser(parser, args.command)._actions}
    for key, value in overrides.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            # top-level keys only apply to the commands that have them
            if key not in section_keys:
                continue
            raise ConfigurationError(f"{args.config}: unknown setting '{key}' for {args.command}")
        if isinstance(value, str) and callable(action.type):
            try:
                value = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise ConfigurationError(f"{args.config}: bad value for '{key}': {e}") from e
        if action.choices is not None and value not in action.choices:
            raise ConfigurationError(f"{args.config}: '{key}' must be one of {sorted(action.choices)}")
        setattr(args, key, value)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    set_log_level(args.log_level)
    try:
        apply_config(parser, args)
        set_log_level(args.log_level)
    except Exception as e:  # pylint: disable=broad-exception-caught
        return install_error_handlers(e)

    arguments: Dict[str, Any] = {k: v for k, v in vars(args).items() if k != "handler"}
    out_dir = getattr(args, "out", None)
    start = time.perf_counter()
    try:
        with CommandAuditor(args.command, arguments, out_dir=out_dir, seed=args.seed) as auditor:
            args.handler(args, auditor)
            if out_dir is not None:
                ReportService.write_manifest(
                    out_dir, args.command, arguments, args.seed, time.perf_counter() - start, auditor.dataset_hash
                )
    except Exception as e:  # pylint: disable=broad-exception-caught
        return install_error_handlers(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
