import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

from src.core.errors import ConfigurationError

load_dotenv()


class Settings(BaseSettings):
    # Application settings
    ENVIRONMENT: str = "development"
    LOG_LEVEL: str = "INFO"

    # Worker pool size (fallback for --threads)
    LARE_THREADS: Optional[int] = None

    # Dense linear algebra caps
    DENSE_ITEM_CAP: int = 32768
    EIGEN_ITEM_CAP: int = 4096
    GENERAL_EIGEN_CAP: int = 512

    # Inference batching (users per scoring chunk)
    SCORE_BATCH_SIZE: int = 4096

    # Recompute the normal-equation residual after every fit
    COMPUTE_RESIDUAL: bool = True

    # Run store override; defaults to <out_dir>/runs.db
    DATABASE_URL: Optional[str] = None

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


settings = Settings()


def resolve_threads(cli_value: Optional[int] = None) -> int:
    """Worker count: explicit flag, then LARE_THREADS, then the CPU count"""
    if cli_value is not None:
        if cli_value < 1:
            raise ConfigurationError("--threads must be at least 1")
        return cli_value
    if settings.LARE_THREADS:
        return max(1, settings.LARE_THREADS)
    return os.cpu_count() or 1


def load_experiment_config(path: Path) -> Dict[str, Any]:
    """
    Load a TOML experiment config file.

    Args:
        path: Path to the TOML file

    Returns:
        Parsed nested dictionary

    Raises:
        ConfigurationError: If the file is missing or not valid TOML
    """
    if not path.exists():
        raise ConfigurationError(f"Config file {path} not found")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Config file {path} is not valid TOML: {e}") from e


def command_overrides(config: Dict[str, Any], command: str) -> Dict[str, Any]:
    """
    Flatten the config for one command.

    Top-level scalar keys apply to every command; keys in the `[command]` table
    win over them. Other commands' tables are ignored. Dashes in keys are
    normalized to underscores so they line up with argparse destinations.
    """
    flat: Dict[str, Any] = {}
    for key, value in config.items():
        if not isinstance(value, dict):
            flat[key.replace("-", "_")] = value
    section = config.get(command, {})
    if not isinstance(section, dict):
        raise ConfigurationError(f"Config section [{command}] must be a table")
    for key, value in section.items():
        flat[key.replace("-", "_")] = value
    return flat
