"""
Input Validators - checks shared by the trainer, fault plans and the harness.

Each helper returns (is_valid, error_message); callers decide which typed
exception to raise. This keeps one wording for a rule no matter which
component detects the violation.
"""
from typing import Optional, Tuple

from src.core.logging_config import get_logger
from src.models.experiment import FaultLocation, FaultSpec, LocationKind, Persistence, Phase

logger = get_logger(__name__)


def validate_fault_location(location: FaultLocation, n_agents: int) -> Tuple[bool, Optional[str]]:
    """
    Check a fault location against the agent population.

    Args:
        location: Fault target
        n_agents: Number of agents in the run

    Returns:
        Tuple of (is_valid, error_message)
    """
    if location.kind.is_agent_side:
        if location.agent_id is not None and location.agent_id >= n_agents:
            return False, f"{location} references agent {location.agent_id} but only {n_agents} agents exist"
        return True, None

    if n_agents < 2:
        return False, f"{location} requires a server (n_agents >= 2), got n_agents={n_agents}"
    return True, None


def validate_fault_timing(
    spec: FaultSpec,
    phase: Phase,
    episodes: int,
    max_steps: int,
) -> Tuple[bool, Optional[str]]:
    """
    Check that a fault is scheduled inside the run.

    Training timings are 1-based episodes in [1, episodes]; inference
    timings are 0-based steps in [0, max_steps).

    Returns:
        Tuple of (is_valid, error_message)
    """
    if phase == Phase.TRAINING:
        if not 1 <= spec.timing <= episodes:
            return False, f"Fault episode {spec.timing} is outside 1..{episodes}"
        return True, None

    if spec.location.kind not in (LocationKind.AGENT_WEIGHTS, LocationKind.ACTIVATION_READ):
        return False, f"{spec.location} has no meaning at inference (no server, no uploads)"
    if spec.persistence == Persistence.TRANSIENT_READ and not 0 <= spec.timing < max_steps:
        return False, f"Fault step {spec.timing} is outside 0..{max_steps - 1}"
    return True, None


def validate_map_count(requested: int, available: int) -> Tuple[bool, Optional[str]]:
    """
    Check there is one map per agent.

    Returns:
        Tuple of (is_valid, error_message)
    """
    if requested != available:
        return False, f"Expected one map per agent: {requested} agents, {available} maps"
    return True, None
