"""
Range-based weight screening for deployed policies.

Bounds are profiled per layer (weights and bias together) from a
fault-free policy and widened by 10% away from zero. At inference any
parameter read outside its layer's bounds is treated as corrupted and
contributes zero to the forward pass.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.gridworld import all_observations
from src.policy import FaultHook, MLPPolicy, forward_flat
from src.policy.mlp import layer_slices

RANGE_MARGIN = 0.1


@dataclass(frozen=True)
class RangeDetector:
    """
    Per-layer acceptance bounds.

    Attributes:
        layer_dims: Geometry the bounds were profiled on
        bounds: (lower, upper) per layer
    """
    layer_dims: Tuple[int, ...]
    bounds: Tuple[Tuple[float, float], ...]

    def lower_upper(self) -> Tuple[np.ndarray, np.ndarray]:
        """Bounds broadcast to the flat parameter vector."""
        lower = np.empty(sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:])))
        upper = np.empty_like(lower)
        for s, (lo, hi) in zip(layer_slices(self.layer_dims), self.bounds):
            lower[s.params] = lo
            upper[s.params] = hi
        return lower, upper

    def screen(self, values: np.ndarray) -> np.ndarray:
        """Boolean mask of parameters strictly outside their layer bounds."""
        lower, upper = self.lower_upper()
        return (values < lower) | (values > upper)

    def filter(self, values: np.ndarray) -> np.ndarray:
        """Zero every out-of-range parameter."""
        flagged = self.screen(values)
        if not flagged.any():
            return values
        out = np.array(values, dtype=np.float64, copy=True)
        out[flagged] = 0.0
        return out


def build_range_detector(policy: MLPPolicy, margin: float = RANGE_MARGIN) -> RangeDetector:
    """
    Profile a fault-free policy.

    For a layer with extreme values w_min and w_max the bounds are
    w_min - margin*|w_min| and w_max + margin*|w_max|.
    """
    values = policy.dequantized()
    bounds: List[Tuple[float, float]] = []
    for s in policy.layer_slices():
        layer = values[s.params]
        w_min, w_max = float(layer.min()), float(layer.max())
        bounds.append((w_min - margin * abs(w_min), w_max + margin * abs(w_max)))
    return RangeDetector(tuple(policy.layer_dims), tuple(bounds))


def screen(policy: MLPPolicy, detector: RangeDetector) -> np.ndarray:
    """Out-of-range mask over the policy's stored parameters."""
    return detector.screen(policy.dequantized())


def guarded_forward(
    policy: MLPPolicy,
    obs,
    detector: RangeDetector,
    fault_hook: Optional[FaultHook] = None,
) -> np.ndarray:
    """Forward pass with out-of-range parameters replaced by zero."""
    return forward_flat(detector.filter(policy.dequantized()), policy.layer_dims, obs, fault_hook)


def guarded_value_table(policy: MLPPolicy, detector: RangeDetector) -> np.ndarray:
    """(81, 4) action values under the range guard, ordered by state_id."""
    observations = np.array([o.as_array() for o in all_observations()])
    return forward_flat(detector.filter(policy.dequantized()), policy.layer_dims, observations)


def build_range_detectors(policies: Sequence[MLPPolicy]) -> List[RangeDetector]:
    return [build_range_detector(p) for p in policies]
