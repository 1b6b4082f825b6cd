"""
Guard event log.

Every detection, recovery and transient/persistent classification becomes
one row. Rows are also logged, at a level chosen by how serious the event
is: a recovery that could not run is a warning, a fault that came back
after recovery is an error, the rest is informational.
"""
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterator, List, Optional

import pandas as pd

from src.core.exceptions import ReportError
from src.core.logging_config import get_logger

logger = get_logger(__name__)

GUARD_EVENT_COLUMNS = ["episode", "verdict", "agent", "action_taken", "recovered_within_k"]

# action_taken values
DETECTED = "detected"
AGENT_RESTORED = "agent_restored"
SERVER_REVERTED = "server_reverted"
RECOVERY_DEFERRED = "recovery_deferred"
CLASSIFIED_TRANSIENT = "classified_transient"
CLASSIFIED_PERSISTENT = "classified_persistent"


@dataclass(frozen=True)
class GuardEvent:
    """
    One guard event.

    Attributes:
        episode: Episode the event happened after
        verdict: Verdict kind value ("agent_fault" / "server_fault")
        agent: Agent concerned, -1 for server-wide events
        action_taken: What the guard did
        recovered_within_k: Classification outcome; None until known
    """
    episode: int
    verdict: str
    agent: int
    action_taken: str
    recovered_within_k: Optional[bool] = None


class GuardEventLog:
    """Append-only list of GuardEvents."""

    def __init__(self):
        self._events: List[GuardEvent] = []

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[GuardEvent]:
        return iter(self._events)

    def record(self, event: GuardEvent) -> None:
        self._events.append(event)
        self._log_event(event)

    def _log_event(self, event: GuardEvent) -> None:
        if event.action_taken == CLASSIFIED_PERSISTENT:
            log_fn = logger.error
        elif event.action_taken in (DETECTED, RECOVERY_DEFERRED):
            log_fn = logger.warning
        else:
            log_fn = logger.info

        who = "server" if event.agent < 0 else f"agent {event.agent}"
        log_fn(f"GUARD: episode={event.episode} {event.verdict} {who} action={event.action_taken}")

    def count(self, action_taken: str) -> int:
        return sum(1 for e in self._events if e.action_taken == action_taken)

    @property
    def detections(self) -> int:
        return self.count(DETECTED)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([astuple(e) for e in self._events], columns=GUARD_EVENT_COLUMNS)

    def to_csv(self, path: Path) -> None:
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self.to_dataframe().to_csv(path, index=False)
        except OSError as e:
            raise ReportError(f"Failed to write guard events: {e}", path=Path(path)) from e
