"""
Reward-drop detector.

Per agent the detector keeps the trailing W episode returns that were not
counted as drops. An episode is a drop when

    return < baseline - (p / 100) * |baseline|

which reads as a p% drop for positive baselines and stays meaningful for
negative ones. The baseline is frozen when a streak of drops starts. A
streak reaching k episodes flags the agent; a majority of flagged agents
means the server is at fault.
"""
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, List, Optional, Sequence

import numpy as np

from src.core.logging_config import get_logger
from src.models import DetectorConfig

logger = get_logger(__name__)


class VerdictKind(str, Enum):
    NO_FAULT = "no_fault"
    AGENT_FAULT = "agent_fault"
    SERVER_FAULT = "server_fault"


@dataclass(frozen=True)
class Verdict:
    """
    Outcome of one detector update.

    Attributes:
        kind: NoFault, AgentFault or ServerFault
        agent_id: The faulty agent (AgentFault only)
        streak_start: Episode the triggering drop streak began
    """
    kind: VerdictKind
    agent_id: Optional[int] = None
    streak_start: Optional[int] = None

    def __post_init__(self):
        if (self.kind == VerdictKind.AGENT_FAULT) != (self.agent_id is not None):
            raise ValueError("AgentFault verdicts carry exactly one agent id; others carry none")

    @classmethod
    def agent_fault(cls, agent_id: int, streak_start: Optional[int] = None) -> "Verdict":
        return cls(VerdictKind.AGENT_FAULT, agent_id, streak_start)

    @classmethod
    def server_fault(cls, streak_start: Optional[int] = None) -> "Verdict":
        return cls(VerdictKind.SERVER_FAULT, None, streak_start)


NO_FAULT = Verdict(VerdictKind.NO_FAULT)


@dataclass
class _AgentTrack:
    history: Deque[float]
    streak: int = 0
    streak_start: Optional[int] = None
    frozen_baseline: Optional[float] = None
    flagged: bool = False


class RewardDropDetector:
    """
    Detector state for n agents.

    Example:
        >>> detector = RewardDropDetector(DetectorConfig(), n_agents=12)
        >>> verdicts = detector.update(episode, returns)
    """

    def __init__(self, config: DetectorConfig, n_agents: int):
        if n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {n_agents}")
        self.config = config
        self.n_agents = n_agents
        self._tracks = [_AgentTrack(deque(maxlen=config.window)) for _ in range(n_agents)]

    def baseline(self, agent_id: int) -> Optional[float]:
        """Current reference return of an agent (None during warm-up)."""
        track = self._tracks[agent_id]
        if track.frozen_baseline is not None:
            return track.frozen_baseline
        if len(track.history) < self.config.window:
            return None
        return float(np.mean(track.history))

    def streak(self, agent_id: int) -> int:
        return self._tracks[agent_id].streak

    def is_dropped(self, value: float, baseline: float) -> bool:
        return value < baseline - (self.config.drop_percent / 100.0) * abs(baseline)

    def update(self, episode: int, returns: Sequence[float]) -> List[Verdict]:
        """
        Feed one return per agent.

        Returns:
            Verdicts raised by this episode; empty means NoFault. Each
            agent is reported once per drop streak.

        Raises:
            ValueError: If the number of returns differs from n_agents
        """
        if len(returns) != self.n_agents:
            raise ValueError(f"Expected {self.n_agents} returns, got {len(returns)}")

        k = self.config.consecutive
        newly_flagged = []
        for agent_id, value in enumerate(returns):
            track = self._tracks[agent_id]
            baseline = self.baseline(agent_id)
            if baseline is None:
                track.history.append(float(value))
                continue

            if self.is_dropped(value, baseline):
                if track.streak == 0:
                    track.frozen_baseline = baseline
                    track.streak_start = episode
                track.streak += 1
                if track.streak >= k and not track.flagged:
                    newly_flagged.append(agent_id)
            else:
                track.streak = 0
                track.streak_start = None
                track.frozen_baseline = None
                track.flagged = False
                track.history.append(float(value))

        if not newly_flagged:
            return []

        over_threshold = [i for i, t in enumerate(self._tracks) if t.streak >= k]
        if self.n_agents >= 2 and len(over_threshold) > self.n_agents / 2:
            for i in over_threshold:
                self._tracks[i].flagged = True
            start = min(self._tracks[i].streak_start for i in over_threshold)
            return [Verdict.server_fault(start)]

        verdicts = []
        for agent_id in newly_flagged:
            self._tracks[agent_id].flagged = True
            verdicts.append(Verdict.agent_fault(agent_id, self._tracks[agent_id].streak_start))
        return verdicts

    def reset(self, agent_ids: Optional[Sequence[int]] = None) -> None:
        """Clear drop streaks (all agents by default); baseline history is kept."""
        for agent_id in range(self.n_agents) if agent_ids is None else agent_ids:
            track = self._tracks[agent_id]
            track.streak = 0
            track.streak_start = None
            track.frozen_baseline = None
            track.flagged = False


def update_detector(state: RewardDropDetector, episode: int, episode_rewards: Sequence[float]) -> List[Verdict]:
    """Functional form of RewardDropDetector.update."""
    return state.update(episode, episode_rewards)
