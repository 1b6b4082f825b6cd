"""
TrainingGuard - detection, checkpointing and recovery wired into training.

The federated trainer calls:

    after_episode(episode, returns, server, policies)  every episode
    after_round(episode, round_index, consensus)       every aggregation round
    close()                                            when training ends
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from src.core.logging_config import LoggerMixin
from src.fedtrain.server import ServerState
from src.fxp import CodeTensor
from src.guard.checkpoint import CheckpointManager
from src.guard.detector import RewardDropDetector, Verdict, VerdictKind
from src.guard.events import (
    CLASSIFIED_PERSISTENT,
    CLASSIFIED_TRANSIENT,
    DETECTED,
    RECOVERY_DEFERRED,
    GuardEvent,
    GuardEventLog,
)
from src.guard.recovery import checkpoint_for, recover
from src.models import DetectorConfig
from src.policy import MLPPolicy

SERVER_PARTY = -1


@dataclass
class _Watch:
    verdict: str
    recovered_at: int


class TrainingGuard(LoggerMixin):
    """
    Reward-drop detection with checkpoint recovery for one training run.

    After a recovery the party is watched for k episodes: no new verdict
    in that time classifies the fault as transient, a new verdict as
    persistent.

    Example:
        >>> guard = TrainingGuard(DetectorConfig(), n_agents=12, comm_interval=10)
        >>> result = train_federated(config, maps, plan, guard=guard)
        >>> result.guard_events
    """

    def __init__(
        self,
        config: DetectorConfig,
        n_agents: int,
        comm_interval: int = 10,
        layer_dims: Sequence[int] = (4, 64, 4),
        checkpoint_dir: Optional[Path] = None,
    ):
        self.config = config
        self.n_agents = n_agents
        self.detector = RewardDropDetector(config, n_agents)
        # Enough history to reach back past a full drop streak
        keep = math.ceil(config.consecutive / (comm_interval * config.checkpoint_every)) + 2
        self.checkpoints = CheckpointManager(config.checkpoint_every, layer_dims, checkpoint_dir, keep=keep)
        self.events = GuardEventLog()
        self._watches: Dict[int, _Watch] = {}

    @property
    def detections(self) -> int:
        """Number of fault verdicts raised so far."""
        return self.events.detections

    def after_round(self, episode: int, round_index: int, consensus: CodeTensor) -> None:
        self.checkpoints.maybe_checkpoint(round_index, episode, consensus)

    def after_episode(
        self,
        episode: int,
        returns: Sequence[float],
        server: Optional[ServerState],
        policies: List[MLPPolicy],
    ) -> List[Verdict]:
        """
        Feed one episode of returns and act on the verdicts.

        Returns:
            Verdicts raised this episode (empty for NoFault)
        """
        verdicts = self.detector.update(episode, returns)
        for verdict in verdicts:
            party = SERVER_PARTY if verdict.kind == VerdictKind.SERVER_FAULT else verdict.agent_id
            self._close_watch(episode, party, recurred=True)
            if party == SERVER_PARTY:
                for agent_id in list(self._watches):
                    self._close_watch(episode, agent_id, recurred=True)

            self.events.record(GuardEvent(episode, verdict.kind.value, party, DETECTED))
            action = recover(verdict, server, policies, checkpoint_for(verdict, self.checkpoints))
            self.events.record(GuardEvent(episode, verdict.kind.value, party, action))
            self.detector.reset(None if party == SERVER_PARTY else [party])
            if action != RECOVERY_DEFERRED:
                self._watches[party] = _Watch(verdict.kind.value, episode)

        for party, watch in list(self._watches.items()):
            if episode - watch.recovered_at >= self.config.consecutive:
                self._close_watch(episode, party, recurred=False)
        return verdicts

    def _close_watch(self, episode: int, party: int, recurred: bool) -> None:
        watch = self._watches.pop(party, None)
        if watch is None:
            return
        action = CLASSIFIED_PERSISTENT if recurred else CLASSIFIED_TRANSIENT
        self.events.record(GuardEvent(episode, watch.verdict, party, action, recovered_within_k=not recurred))

    def close(self) -> None:
        self.checkpoints.close()
