"""
Configuration management via environment variables.

This module loads process-level configuration from a .env file using
python-dotenv. Values are accessed through the Settings class.

Experiment parameters (training schedule, fault plans, sweep axes) do NOT
live here: they are declared per campaign in TOML files and validated by
the pydantic models in src.models.
"""
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from src.core.exceptions import ConfigError


PROJECT_ROOT = Path(__file__).parent.parent.parent

# Load .env file from project root
# This must happen before accessing os.environ
load_dotenv(PROJECT_ROOT / ".env")


@dataclass(frozen=True)
class Settings:
    """
    Process settings loaded from environment variables.

    frozen=True keeps the settings immutable once read.

    Attributes:
        app_name: Identifier used in log lines
        app_env: Environment name (development, ci, production)
        log_level: Console logging verbosity
        log_dir: Directory for daily log files (None = console only)
        workers: Worker threads for agents and sweep cells
        output_dir: Default directory for CSV/SVG/summary outputs
        maps_dir: Directory with custom 10x10 map files (None = bundled maps)
    """
    app_name: str
    app_env: str
    log_level: str
    log_dir: Optional[Path]
    workers: int
    output_dir: Path
    maps_dir: Optional[Path]

    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.app_env.lower() == "development"


def _get_env(key: str, default: Optional[str] = None) -> str:
    """
    Get environment variable with optional default.

    Args:
        key: Environment variable name
        default: Default value if not set

    Returns:
        Environment variable value

    Raises:
        ConfigError: If required variable is not set and no default provided
    """
    value = os.environ.get(key, default)
    if value is None:
        raise ConfigError(
            f"Required environment variable '{key}' is not set. "
            f"Please check your .env file."
        )
    return value


def _optional_path(value: str) -> Optional[Path]:
    return Path(value) if value.strip() else None


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Returns:
        Settings instance with all configuration values

    Raises:
        ConfigError: If FAULTLAB_WORKERS is not a positive integer
    """
    raw_workers = _get_env("FAULTLAB_WORKERS", "1")
    try:
        workers = int(raw_workers)
    except ValueError as e:
        raise ConfigError(f"FAULTLAB_WORKERS must be an integer, got {raw_workers!r}") from e
    if workers < 1:
        raise ConfigError(f"FAULTLAB_WORKERS must be >= 1, got {workers}")

    return Settings(
        app_name=_get_env("APP_NAME", "FRLFaultLab"),
        app_env=_get_env("APP_ENV", "development"),
        log_level=_get_env("LOG_LEVEL", "INFO"),
        log_dir=_optional_path(_get_env("LOG_DIR", "")),
        workers=workers,
        output_dir=Path(_get_env("FAULTLAB_OUTPUT_DIR", "results")),
        maps_dir=_optional_path(_get_env("FAULTLAB_MAPS_DIR", "")),
    )
