"""
Guard module - fault detection and mitigation.

- detector.py       : reward-drop detector and its verdicts
- checkpoint.py     : periodic server checkpoints with async atomic writes
- recovery.py       : restoring agents or the server from a checkpoint
- events.py         : guard event log
- training.py       : TrainingGuard, the trainer-facing combination of the above
- range_detector.py : inference-time weight range screening
"""
from src.guard.checkpoint import Checkpoint, CheckpointManager, checkpoint_path, load_checkpoint
from src.guard.detector import NO_FAULT, RewardDropDetector, Verdict, VerdictKind, update_detector
from src.guard.events import GUARD_EVENT_COLUMNS, GuardEvent, GuardEventLog
from src.guard.range_detector import (
    RangeDetector,
    build_range_detector,
    build_range_detectors,
    guarded_forward,
    guarded_value_table,
    screen,
)
from src.guard.recovery import checkpoint_for, recover
from src.guard.training import TrainingGuard

__all__ = [
    "Checkpoint",
    "CheckpointManager",
    "checkpoint_path",
    "load_checkpoint",
    "NO_FAULT",
    "RewardDropDetector",
    "Verdict",
    "VerdictKind",
    "update_detector",
    "GUARD_EVENT_COLUMNS",
    "GuardEvent",
    "GuardEventLog",
    "RangeDetector",
    "build_range_detector",
    "build_range_detectors",
    "guarded_forward",
    "guarded_value_table",
    "screen",
    "checkpoint_for",
    "recover",
    "TrainingGuard",
]
