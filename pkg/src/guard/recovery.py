"""
Recovery actions for detector verdicts.

An agent fault reloads that agent from the server checkpoint; a server
fault reverts the server's memory and every agent to it. The checkpoint
used is the newest one taken before the drop streak began, so a snapshot
of already corrupted parameters is never restored.
"""
from typing import Optional, Sequence

from src.core.logging_config import get_logger
from src.fedtrain.server import ServerState
from src.guard.checkpoint import Checkpoint, CheckpointManager
from src.guard.detector import Verdict, VerdictKind
from src.guard.events import AGENT_RESTORED, RECOVERY_DEFERRED, SERVER_REVERTED
from src.policy import MLPPolicy, load_params

logger = get_logger(__name__)


def checkpoint_for(verdict: Verdict, manager: CheckpointManager) -> Optional[Checkpoint]:
    """Newest checkpoint older than the verdict's drop streak."""
    return manager.latest(before_episode=verdict.streak_start)


def recover(
    verdict: Verdict,
    server: Optional[ServerState],
    policies: Sequence[MLPPolicy],
    checkpoint: Optional[Checkpoint],
) -> Optional[str]:
    """
    Apply the recovery action for one verdict.

    Args:
        verdict: AgentFault or ServerFault (NoFault is a no-op)
        server: Server whose memory a ServerFault reverts (None for n=1)
        policies: Agent policies, indexed by agent id
        checkpoint: Snapshot to restore from

    Returns:
        The action taken, or None for NoFault
    """
    if verdict.kind == VerdictKind.NO_FAULT:
        return None
    if checkpoint is None:
        logger.warning(f"No checkpoint available for {verdict.kind.value}; recovery deferred")
        return RECOVERY_DEFERRED

    if verdict.kind == VerdictKind.AGENT_FAULT:
        load_params(policies[verdict.agent_id], checkpoint.codes, keep_residual=False)
        logger.debug(f"Agent {verdict.agent_id} restored from round {checkpoint.round_index}")
        return AGENT_RESTORED

    if server is not None and server.n_agents >= 2:
        server.restore(checkpoint.codes)
    for policy in policies:
        load_params(policy, checkpoint.codes, keep_residual=False)
    logger.debug(f"Server reverted to round {checkpoint.round_index}")
    return SERVER_REVERTED
