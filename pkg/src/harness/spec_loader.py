"""
Experiment spec loading from TOML.

Example file:

    name = "server_vs_agent"
    phase = "training"
    repetitions = 100
    fault_episodes = [900]
    bers = [1e-2]
    locations = ["server_state", "agent_weights(*)"]

    [train]
    n_agents = 12
    episodes = 3000
    fmt = "Q(1,2,5)"
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict

from src.core.exceptions import ConfigError
from src.core.logging_config import get_logger
from src.models import ExperimentSpec, build_model

logger = get_logger(__name__)


def read_toml(path: Path) -> Dict[str, Any]:
    """
    Parse a TOML file.

    Raises:
        ConfigError: If the file is missing or not valid TOML
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"Experiment file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}") from e


def load_experiment_spec(path: Path) -> ExperimentSpec:
    """
    Load and validate an experiment spec.

    Raises:
        ConfigError: On unreadable files or invalid fields
    """
    spec = build_model(ExperimentSpec, read_toml(path))
    logger.info(f"Loaded experiment '{spec.name}' ({spec.phase.value}) from {path}")
    return spec
