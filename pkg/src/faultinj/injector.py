"""
Bit-flip injector.

Faults follow the random bit-flip model: every bit of every code flips
independently with probability `ber`, optionally restricted to one flip
direction. All functions are pure given their RNG, and every flip that is
actually performed is recorded in an InjectionLog.
"""
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.core.exceptions import FormatError
from src.core.logging_config import get_logger
from src.fxp import CodeTensor
from src.fxp.codes import to_signed, to_unsigned, unpack_bits
from src.models.experiment import FaultLocation, FlipMode, LocationKind

logger = get_logger(__name__)

LOG_COLUMNS = ["location", "agent", "time", "offset", "bit", "old_bit", "new_bit"]


class FaultClass(str, Enum):
    AGENT_FAULT = "agent_fault"
    SERVER_FAULT = "server_fault"


def fault_class(location: FaultLocation) -> FaultClass:
    """Agent-origin corruption is an AgentFault, server-origin a ServerFault."""
    if location.kind in (LocationKind.SERVER_STATE, LocationKind.SERVER_BROADCAST):
        return FaultClass.SERVER_FAULT
    return FaultClass.AGENT_FAULT


@dataclass(frozen=True)
class InjectionRecord:
    """One performed flip."""
    location: str
    agent: int
    time: int
    offset: int
    bit: int
    old_bit: int
    new_bit: int


@dataclass
class InjectionLog:
    """
    Audit trail of flips.

    agent is -1 when a flip is not attributable to one agent.
    """
    records: List[InjectionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[InjectionRecord]:
        return iter(self.records)

    def __add__(self, other: "InjectionLog") -> "InjectionLog":
        return InjectionLog(self.records + other.records)

    def extend(self, other: Iterable[InjectionRecord]) -> None:
        self.records.extend(other)

    def flips_by_agent(self) -> dict:
        counts: dict = {}
        for r in self.records:
            counts[r.agent] = counts.get(r.agent, 0) + 1
        return counts

    def to_dataframe(self) -> pd.DataFrame:
        if not self.records:
            return pd.DataFrame(columns=LOG_COLUMNS)
        return pd.DataFrame([asdict(r) for r in self.records], columns=LOG_COLUMNS)

    def to_csv(self, path: Path) -> None:
        self.to_dataframe().to_csv(path, index=False)


def draw_flip_mask(size: int, total_bits: int, ber: float, rng: np.random.Generator) -> np.ndarray:
    """
    (size, total_bits) boolean mask of bits hit by the fault.

    ber 0 and ber 1 are exact and draw nothing from rng.
    """
    if not 0.0 <= ber <= 1.0:
        raise ValueError(f"BER must be in [0, 1], got {ber}")
    if ber == 0.0:
        return np.zeros((size, total_bits), dtype=bool)
    if ber == 1.0:
        return np.ones((size, total_bits), dtype=bool)
    return rng.random((size, total_bits)) < ber


def apply_flip_mask(
    codes: CodeTensor,
    mask: np.ndarray,
    mode: FlipMode,
    location: str = "",
    agent: Optional[int] = None,
    time: int = 0,
) -> Tuple[CodeTensor, InjectionLog]:
    """
    Flip the masked bits allowed by `mode`.

    Args:
        codes: Codes to corrupt (not modified)
        mask: (codes.size, total_bits) bits hit by the fault
        mode: BOTH flips every hit bit, ZERO_TO_ONE only hit 0-bits,
            ONE_TO_ZERO only hit 1-bits
        location, agent, time: Copied into the log records

    Returns:
        Tuple of (corrupted codes, log of performed flips)
    """
    fmt = codes.fmt
    flat = codes.codes.reshape(-1)
    if mask.shape != (flat.size, fmt.total_bits):
        raise FormatError(f"Flip mask of shape {mask.shape} does not match {flat.size} codes of {fmt}")

    bits = unpack_bits(flat, fmt)
    if mode == FlipMode.ZERO_TO_ONE:
        hit = mask & (bits == 0)
    elif mode == FlipMode.ONE_TO_ZERO:
        hit = mask & (bits == 1)
    else:
        hit = mask

    offsets, positions = np.nonzero(hit)
    if offsets.size == 0:
        return codes.copy(), InjectionLog()

    flip_words = (hit.astype(np.int64) << np.arange(fmt.total_bits, dtype=np.int64)).sum(axis=1)
    corrupted = to_signed(to_unsigned(flat, fmt) ^ flip_words, fmt).reshape(codes.shape)

    agent_id = -1 if agent is None else int(agent)
    old_bits = bits[offsets, positions]
    records = [
        InjectionRecord(location, agent_id, int(time), int(o), int(b), int(v), int(1 - v))
        for o, b, v in zip(offsets, positions, old_bits)
    ]
    return CodeTensor(corrupted, fmt), InjectionLog(records)


def inject(
    codes: CodeTensor,
    ber: float,
    mode: FlipMode,
    rng: np.random.Generator,
    location: str = "",
    agent: Optional[int] = None,
    time: int = 0,
) -> Tuple[CodeTensor, InjectionLog]:
    """
    Flip every bit independently with probability `ber`.

    Returns:
        Tuple of (corrupted copy, InjectionLog)

    Example:
        >>> t = CodeTensor(np.zeros(4, dtype=np.int64), QFormat(2, 5))
        >>> out, log = inject(t, 1.0, FlipMode.BOTH, np.random.default_rng(0))
        >>> out.codes.tolist(), len(log)
        ([-1, -1, -1, -1], 32)
    """
    mask = draw_flip_mask(codes.size, codes.fmt.total_bits, ber, rng)
    return apply_flip_mask(codes, mask, mode, location=location, agent=agent, time=time)


def inject_bit(
    codes: CodeTensor,
    offset: int,
    bit: int,
    location: str = "",
    agent: Optional[int] = None,
    time: int = 0,
) -> Tuple[CodeTensor, InjectionLog]:
    """
    Flip exactly one bit (the single bit-flip starting point of a BER sweep).

    Raises:
        FormatError: If offset or bit is out of range
    """
    if not 0 <= offset < codes.size:
        raise FormatError(f"Offset {offset} outside tensor of {codes.size} codes")
    if not 0 <= bit < codes.fmt.total_bits:
        raise FormatError(f"Bit index {bit} out of range for {codes.fmt}")
    mask = np.zeros((codes.size, codes.fmt.total_bits), dtype=bool)
    mask[offset, bit] = True
    return apply_flip_mask(codes, mask, FlipMode.BOTH, location=location, agent=agent, time=time)
