"""
Parameter server - smoothing-average aggregation.

Round k mixes the n uploaded parameter sets as

    theta_i+ = alpha_k * theta_i + beta_k * sum_{j != i} theta_j,
    beta_k   = (1 - alpha_k) / (n - 1)

in real arithmetic over the dequantized codes, then requantizes each
agent's result. alpha_k decays exponentially towards 1/n, where every
agent receives the plain mean.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import PolicyShapeError
from src.core.logging_config import get_logger
from src.fxp import CodeTensor, QFormat, quantize

logger = get_logger(__name__)


def alpha_schedule(k: int, alpha0: float, tau: float, n: int) -> float:
    """
    alpha_k = 1/n + (alpha0 - 1/n) * exp(-k / tau).

    Raises:
        ValueError: If k < 0, n < 1, tau <= 0 or alpha0 < 1/n

    Example:
        >>> alpha_schedule(0, 0.9, 100.0, 12)
        0.9
    """
    if k < 0:
        raise ValueError(f"Round index must be >= 0, got {k}")
    if n < 1 or tau <= 0:
        raise ValueError(f"Need n >= 1 and tau > 0, got n={n}, tau={tau}")
    floor = 1.0 / n
    if alpha0 < floor:
        raise ValueError(f"alpha0={alpha0} is below 1/n={floor:.6f}")
    if k == 0:
        return alpha0
    return floor + (alpha0 - floor) * math.exp(-k / tau)


@dataclass
class ServerState:
    """
    Server memory between rounds.

    Attributes:
        n_agents: Number of participants
        fmt: Parameter format every upload must share
        alpha0/alpha_tau: Smoothing schedule
        round: Completed aggregation rounds (k of the next round)
        received: Parameter sets of the last round, by agent
        broadcast: Parameter sets sent back in the last round, by agent
    """
    n_agents: int
    fmt: QFormat
    alpha0: float = 0.9
    alpha_tau: float = 100.0
    round: int = 0
    received: List[CodeTensor] = field(default_factory=list)
    broadcast: List[CodeTensor] = field(default_factory=list)

    def current_alpha(self) -> float:
        """Mixing weight the next round will use."""
        if self.n_agents < 2:
            return 1.0
        return alpha_schedule(self.round, self.alpha0, self.alpha_tau, self.n_agents)

    def consensus(self) -> CodeTensor:
        """
        Plain mean of the last broadcast, requantized.

        Raises:
            ValueError: If no round has completed
        """
        if not self.broadcast:
            raise ValueError("Server has not aggregated yet")
        total = np.zeros(self.broadcast[0].size)
        for t in self.broadcast:
            total += t.dequantize()
        return CodeTensor(quantize(total / len(self.broadcast), self.fmt), self.fmt)

    def restore(self, codes: CodeTensor) -> None:
        """Overwrite server memory with one parameter set for every agent."""
        self.broadcast = [codes.copy() for _ in range(self.n_agents)]


def _check_uploads(thetas: Sequence[CodeTensor]) -> Tuple[int, QFormat]:
    size, fmt = thetas[0].size, thetas[0].fmt
    for i, t in enumerate(thetas):
        if t.size != size:
            raise PolicyShapeError(f"Upload {i} has {t.size} parameters, expected {size}")
        if t.fmt != fmt:
            raise PolicyShapeError(f"Upload {i} is {t.fmt}, expected {fmt}")
    return size, fmt


def aggregate(
    server: ServerState,
    thetas: Sequence[CodeTensor],
    k: Optional[int] = None,
    alpha: Optional[float] = None,
) -> List[CodeTensor]:
    """
    Smoothing-average aggregation of one round.

    Args:
        server: Server state; its round counter advances by one
        thetas: Uploaded flat parameter sets, agent index ascending
        k: Round index for the alpha schedule (default: server.round)
        alpha: Explicit mixing weight overriding the schedule

    Returns:
        n requantized parameter sets, one per agent

    Raises:
        ValueError: If fewer than 2 sets are given or alpha is outside [1/n, 1]
        PolicyShapeError: On length or format mismatch
    """
    n = len(thetas)
    if n < 2:
        raise ValueError(f"Aggregation needs at least 2 parameter sets, got {n}")
    _, fmt = _check_uploads(thetas)
    if alpha is None:
        alpha = alpha_schedule(server.round if k is None else k, server.alpha0, server.alpha_tau, n)
    if not 1.0 / n - 1e-12 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [1/n, 1]")

    values = [t.dequantize() for t in thetas]
    # Fixed summation order: agent index ascending
    total = np.zeros_like(values[0])
    for v in values:
        total += v

    if math.isclose(alpha, 1.0 / n, rel_tol=0.0, abs_tol=1e-15):
        mean = CodeTensor(quantize(total / n, fmt), fmt)
        outputs = [mean.copy() for _ in range(n)]
    else:
        beta = (1.0 - alpha) / (n - 1)
        outputs = [CodeTensor(quantize(alpha * v + beta * (total - v), fmt), fmt) for v in values]

    server.received = [t.copy() for t in thetas]
    server.broadcast = [t.copy() for t in outputs]
    server.round += 1
    logger.debug(f"Aggregation round {server.round}: alpha={alpha:.4f} n={n}")
    return outputs
