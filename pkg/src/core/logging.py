import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

from pydantic import ValidationError
from sqlalchemy.exc import SQLAlchemyError

from src.core.config import settings
from src.core.errors import (
    CapacityError,
    ConfigurationError,
    ContractError,
    DataFormatError,
    EmptyAfterFilterError,
    EmptyDatasetError,
    NumericalError,
)

# Exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

LOG_LEVEL = getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)

# Same format everywhere; stdout carries command output, so logs go to stderr
logging.basicConfig(
    stream=sys.stderr,
    level=LOG_LEVEL,
    format="%(asctime)s %(levelname)s %(name)s %(message)s"
)

logger = logging.getLogger("larex")


def set_log_level(level: Optional[str]) -> None:
    """Override the application log level (from --log-level)"""
    if level:
        logger.setLevel(getattr(logging, level.upper(), logging.INFO))


class CommandAuditor:
    """
    Wraps one CLI command: logs the outcome and appends a RunLog row to the run store.

    Commands may set `dataset_hash` on the auditor once they know it.
    Run-store failures are logged as warnings and never change the outcome.
    """

    def __init__(self, command: str, arguments: Dict[str, Any], out_dir: Optional[Path] = None,
                 seed: Optional[int] = None):
        self.command = command
        self.arguments = arguments
        self.out_dir = out_dir
        self.seed = seed
        self.dataset_hash: Optional[str] = None
        self.exit_code = EXIT_OK
        self._start = 0.0

    def __enter__(self) -> "CommandAuditor":
        self._start = time.perf_counter()
        logger.info("%s started", self.command)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        duration = time.perf_counter() - self._start
        error_details = None

        if exc is not None:
            self.exit_code, _, _ = resolve_error(exc)
            error_details = f"{type(exc).__name__}: {exc}"
            logger.error(
                "%s -> %d (%.3fs): %s",
                self.command,
                self.exit_code,
                duration,
                error_details,
                exc_info=self.exit_code == EXIT_UNEXPECTED
            )
        else:
            logger.info("%s -> %d (%.3fs)", self.command, self.exit_code, duration)

        self._log_to_run_store(duration, error_details)
        return False

    def _log_to_run_store(self, duration: float, error_details: Optional[str]) -> None:
        """Append the run to the RunLog table"""
        if self.out_dir is None or not Path(self.out_dir).is_dir():
            return
        # Imported lazily so the logging module stays importable without the db layer
        from src.db.models import RunLog
        from src.db.session import database_url_for, session_scope

        try:
            with session_scope(database_url_for(self.out_dir)) as db:
                db.add(RunLog(
                    command=self.command,
                    arguments=_jsonable(self.arguments),
                    exit_code=self.exit_code,
                    duration_seconds=round(duration, 3),
                    seed=self.seed,
                    dataset_hash=self.dataset_hash,
                    error_details=error_details,
                ))
        except SQLAlchemyError as e:
            logger.warning("Failed to log to run store (database error): %s", str(e))
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to log to run store (unexpected error %s): %s", type(e).__name__, str(e))


def _jsonable(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """Reduce argparse values to JSON-friendly types"""
    clean: Dict[str, Any] = {}
    for key, value in arguments.items():
        if callable(value):
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, (list, tuple)):
            value = [str(v) if isinstance(v, Path) else v for v in value]
        clean[key] = value
    return clean


# Ordered most specific first; the first isinstance match wins
ERROR_HANDLERS: List[Tuple[Type[BaseException], int, str]] = [
    (ValidationError, EXIT_USAGE, "Validation Error"),
    (ConfigurationError, EXIT_USAGE, "Configuration Error"),
    (CapacityError, EXIT_USAGE, "Capacity Error"),
    (EmptyAfterFilterError, EXIT_USAGE, "Empty After Filter"),
    (EmptyDatasetError, EXIT_USAGE, "Empty Dataset"),
    (ContractError, EXIT_USAGE, "Contract Violation"),
    (NumericalError, EXIT_NUMERICAL, "Numerical Error"),
    (DataFormatError, EXIT_IO, "Data Format Error"),
    (FileNotFoundError, EXIT_USAGE, "File Not Found"),
    (OSError, EXIT_IO, "I/O Error"),
    (ValueError, EXIT_USAGE, "Invalid Request"),
]


def resolve_error(exc: BaseException) -> Tuple[int, str, str]:
    """
    Map an exception to (exit code, title, user-facing message).

    Args:
        exc: The exception raised by a command

    Returns:
        Tuple of (exit_code, title, detail)
    """
    for exc_type, code, title in ERROR_HANDLERS:
        if isinstance(exc, exc_type):
            if isinstance(exc, ValidationError):
                detail = "; ".join(
                    f"{'.'.join(str(p) for p in err['loc']) or 'value'}: {err['msg']}"
                    for err in exc.errors()
                )
            else:
                detail = str(exc)
            return code, title, detail
    return EXIT_UNEXPECTED, "Internal Error", "An unexpected error occurred. Re-run with --log-level DEBUG for details."


def install_error_handlers(exc: BaseException) -> int:
    """
    Report a command failure on stderr and return its exit code.

    The technical details are already in the log (CommandAuditor); stderr gets
    the short user-facing form.
    """
    code, title, detail = resolve_error(exc)
    print(f"error [{title}]: {detail}", file=sys.stderr)
    return code
