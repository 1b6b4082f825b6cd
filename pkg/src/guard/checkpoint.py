"""
Server checkpointing.

Every `checkpoint_every` aggregation rounds the server's consensus
parameters are snapshotted. The in-memory snapshot is what recovery uses;
when a directory is configured the snapshot is also written to disk by a
background thread (temp file + rename), off the training critical path.
A pending write is awaited before the next one starts and before any
recovery, so at most one write is in flight.
"""
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Optional, Sequence, Tuple

from src.core.exceptions import CheckpointError
from src.core.logging_config import LoggerMixin
from src.fxp import CodeTensor
from src.policy.serialization import atomic_write_bytes, encode_codes_file, read_codes_file


CHECKPOINT_SUFFIX = ".ckpt"


@dataclass(frozen=True)
class Checkpoint:
    """
    Snapshot of one completed aggregation round.

    Attributes:
        codes: Flat parameter codes (format included)
        round_index: Aggregation round of the snapshot
        episode: Episode after which the round ran
        digest: sha256 of the encoded snapshot
    """
    codes: CodeTensor
    round_index: int
    episode: int
    digest: str
    layer_dims: Tuple[int, ...] = (4, 64, 4)

    @classmethod
    def take(cls, codes: CodeTensor, round_index: int, episode: int, layer_dims: Sequence[int]) -> "Checkpoint":
        snapshot = codes.flat()
        data = encode_codes_file(snapshot, tuple(layer_dims), round_index)
        return cls(snapshot, round_index, episode, data[-32:].hex(), tuple(layer_dims))

    def encode(self) -> bytes:
        return encode_codes_file(self.codes, self.layer_dims, self.round_index)


def checkpoint_path(directory: Path, round_index: int) -> Path:
    return Path(directory) / f"round_{round_index:06d}{CHECKPOINT_SUFFIX}"


def load_checkpoint(path: Path, episode: int = -1) -> Checkpoint:
    """
    Read and verify a checkpoint file.

    Raises:
        CheckpointIntegrityError: If the digest or header does not verify
        CheckpointError: If the file cannot be read
    """
    decoded = read_codes_file(path)
    return Checkpoint(decoded.codes, decoded.round_index, episode, decoded.digest, decoded.layer_dims)


class CheckpointManager(LoggerMixin):
    """
    Keeps the last `keep` snapshots and writes them asynchronously.

    Example:
        >>> manager = CheckpointManager(every=5, layer_dims=(4, 64, 4), directory=Path("ckpt"))
        >>> manager.maybe_checkpoint(round_index=5, episode=50, codes=server.consensus())
    """

    def __init__(
        self,
        every: int = 5,
        layer_dims: Sequence[int] = (4, 64, 4),
        directory: Optional[Path] = None,
        keep: int = 3,
    ):
        if every < 1 or keep < 1:
            raise ValueError(f"every and keep must be >= 1, got every={every}, keep={keep}")
        self.every = every
        self.layer_dims = tuple(layer_dims)
        self.directory = Path(directory) if directory is not None else None
        self.history: Deque[Checkpoint] = deque(maxlen=keep)
        self.write_failures = 0
        self._executor: Optional[ThreadPoolExecutor] = None
        self._pending: Optional[Tuple[Checkpoint, Future]] = None

    def maybe_checkpoint(self, round_index: int, episode: int, codes: CodeTensor) -> Optional[Checkpoint]:
        """
        Snapshot the server parameters if this round is due.

        Returns:
            The new Checkpoint, or None when the round is not a checkpoint round
        """
        if round_index <= 0 or round_index % self.every != 0:
            return None
        self.wait()
        checkpoint = Checkpoint.take(codes, round_index, episode, self.layer_dims)
        self.history.append(checkpoint)
        self.logger.debug(f"Checkpoint round {round_index} (episode {episode})")
        if self.directory is not None:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="checkpoint")
            keep = [checkpoint_path(self.directory, c.round_index) for c in self.history]
            future = self._executor.submit(self._write, checkpoint, keep)
            self._pending = (checkpoint, future)
        return checkpoint

    def _write(self, checkpoint: Checkpoint, keep: Sequence[Path]) -> None:
        atomic_write_bytes(checkpoint_path(self.directory, checkpoint.round_index), checkpoint.encode())
        for stale in self.directory.glob(f"round_*{CHECKPOINT_SUFFIX}"):
            if stale not in keep:
                stale.unlink(missing_ok=True)

    def wait(self) -> None:
        """
        Wait for the in-flight write.

        A failed write is logged and its snapshot dropped, so recovery
        falls back to the previous checkpoint.
        """
        if self._pending is None:
            return
        checkpoint, future = self._pending
        self._pending = None
        try:
            future.result()
        except CheckpointError as e:
            self.write_failures += 1
            self.logger.error(f"Checkpoint write failed for round {checkpoint.round_index}: {e.message} ({e.details})")
            if checkpoint in self.history:
                self.history.remove(checkpoint)

    def latest(self, before_episode: Optional[int] = None) -> Optional[Checkpoint]:
        """Newest snapshot, or the newest taken strictly before `before_episode`."""
        self.wait()
        for checkpoint in reversed(self.history):
            if before_episode is None or checkpoint.episode < before_episode:
                return checkpoint
        return None

    def close(self) -> None:
        self.wait()
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
