"""
Quantized MLP policy.

An MLPPolicy keeps two views of the same parameters:

- master weights: float64 values that local learning updates
- stored codes:   fixed-point codes in the policy's QFormat, the "memory"
                  that forward reads and that bit flips corrupt

`sync()` refreshes the codes from the master weights. All parameters live
in one flat vector in layer-major order: for each layer the weight matrix
(fan_in x fan_out, row-major) followed by its bias vector.
"""
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import CorruptedValuesError, PolicyShapeError
from src.core.logging_config import get_logger
from src.fxp import DEFAULT_POLICY_FORMAT, CodeTensor, QFormat, dequantize, quantize
from src.gridworld import N_ACTIONS, all_observations

logger = get_logger(__name__)

DEFAULT_LAYER_DIMS: Tuple[int, ...] = (4, 64, N_ACTIONS)

# (hidden layer index, post-ReLU activations) -> activations actually read
FaultHook = Callable[[int, np.ndarray], np.ndarray]

Layers = List[Tuple[np.ndarray, np.ndarray]]


class LayerSlice(NamedTuple):
    """Flat-vector offsets of one layer's parameters."""
    weight: slice
    bias: slice
    fan_in: int
    fan_out: int

    @property
    def params(self) -> slice:
        """Weights and bias together."""
        return slice(self.weight.start, self.bias.stop)


@dataclass(frozen=True)
class ActionMode:
    """
    Action selection mode; Greedy is EpsilonGreedy with epsilon 0.

    Attributes:
        epsilon: Probability of a uniformly random action
    """
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")

    @property
    def is_greedy(self) -> bool:
        return self.epsilon == 0.0

    @classmethod
    def epsilon_greedy(cls, epsilon: float) -> "ActionMode":
        return cls(epsilon=float(epsilon))


GREEDY = ActionMode(0.0)


def layer_slices(layer_dims: Sequence[int]) -> List[LayerSlice]:
    """Offsets of every layer in the flat parameter vector."""
    slices = []
    offset = 0
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weight = slice(offset, offset + fan_in * fan_out)
        offset = weight.stop
        bias = slice(offset, offset + fan_out)
        offset = bias.stop
        slices.append(LayerSlice(weight, bias, fan_in, fan_out))
    return slices


def param_count(layer_dims: Sequence[int]) -> int:
    """Sum of (fan_in + 1) * fan_out over layers."""
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]))


def unflatten(flat: np.ndarray, layer_dims: Sequence[int]) -> Layers:
    """
    View a flat parameter vector as per-layer (W, b) arrays.

    Raises:
        PolicyShapeError: If the vector length does not match layer_dims
    """
    expected = param_count(layer_dims)
    if flat.shape != (expected,):
        raise PolicyShapeError(
            f"Parameter vector of shape {flat.shape} does not fit layers {tuple(layer_dims)}",
            details=f"expected={expected}",
        )
    return [
        (flat[s.weight].reshape(s.fan_in, s.fan_out), flat[s.bias])
        for s in layer_slices(layer_dims)
    ]


def forward_layers(layers: Layers, x: np.ndarray, fault_hook: Optional[FaultHook] = None) -> np.ndarray:
    """
    Evaluate the MLP on one observation (4,) or a batch (N, 4).

    Hidden layers use ReLU; the output layer is linear. When present, the
    fault hook sees each hidden activation after ReLU and returns the
    values the next layer reads.
    """
    h = x
    last = len(layers) - 1
    for i, (weight, bias) in enumerate(layers):
        h = h @ weight + bias
        if i < last:
            h = np.maximum(h, 0.0)
            if fault_hook is not None:
                h = fault_hook(i, h)
    return h


def forward_flat(
    values: np.ndarray,
    layer_dims: Sequence[int],
    obs,
    fault_hook: Optional[FaultHook] = None,
) -> np.ndarray:
    """Forward pass over an explicit flat vector of real parameter values."""
    x = np.asarray(obs, dtype=np.float64)
    if x.shape[-1] != layer_dims[0]:
        raise PolicyShapeError(
            f"Observation width {x.shape[-1]} does not match input width {layer_dims[0]}"
        )
    return forward_layers(unflatten(values, layer_dims), x, fault_hook)


class MLPPolicy:
    """
    Fully connected policy network with quantized parameter storage.

    Attributes:
        layer_dims: Layer widths, input first (default 4 -> 64 -> 4)
        fmt: Fixed-point format of the stored codes
        master: Float parameter vector (learning state)
        codes: int64 code vector (memory state, fault target)

    Example:
        >>> policy = MLPPolicy.init(rng=np.random.default_rng(0))
        >>> policy.param_count
        644
    """

    def __init__(
        self,
        layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS,
        fmt: QFormat = DEFAULT_POLICY_FORMAT,
        master: Optional[np.ndarray] = None,
    ):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise PolicyShapeError(f"Invalid layer dimensions {dims}")
        if dims[-1] != N_ACTIONS:
            raise PolicyShapeError(f"Output width must be {N_ACTIONS}, got {dims[-1]}")

        self.layer_dims = dims
        self.fmt = fmt
        self._slices = layer_slices(dims)

        n = param_count(dims)
        if master is None:
            self.master = np.zeros(n, dtype=np.float64)
        else:
            self.master = np.array(master, dtype=np.float64).reshape(-1)
            if self.master.size != n:
                raise PolicyShapeError(
                    f"Master weights of length {self.master.size} do not fit layers {dims}",
                    details=f"expected={n}",
                )
        self.codes = np.zeros(n, dtype=np.int64)
        self._values: Optional[np.ndarray] = None
        self._value_table: Optional[np.ndarray] = None
        self.sync()

    @classmethod
    def init(
        cls,
        layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS,
        fmt: QFormat = DEFAULT_POLICY_FORMAT,
        rng: Optional[np.random.Generator] = None,
    ) -> "MLPPolicy":
        """
        He-initialized policy; the output layer uses a 1/fan_in variance.

        Weights are clipped to the format range, biases start at zero.
        """
        rng = rng if rng is not None else np.random.default_rng()
        master = np.zeros(param_count(layer_dims), dtype=np.float64)
        slices = layer_slices(layer_dims)
        for i, s in enumerate(slices):
            gain = 1.0 if i == len(slices) - 1 else 2.0
            master[s.weight] = rng.normal(0.0, np.sqrt(gain / s.fan_in), s.fan_in * s.fan_out)
        np.clip(master, fmt.min_value, fmt.max_value, out=master)
        return cls(layer_dims, fmt, master)

    @property
    def param_count(self) -> int:
        return int(self.master.size)

    def layer_slices(self) -> List[LayerSlice]:
        return list(self._slices)

    def sync(self) -> None:
        """Requantize the stored codes from the master weights."""
        self._set_codes(quantize(self.master, self.fmt))

    def _set_codes(self, codes: np.ndarray) -> None:
        self.codes = np.array(codes, dtype=np.int64).reshape(-1)
        # Writes go through sync/load_params so the caches stay valid
        self.codes.setflags(write=False)
        self._values = None
        self._value_table = None

    def clip_master(self) -> None:
        """Saturate master weights to the format's representable range."""
        np.clip(self.master, self.fmt.min_value, self.fmt.max_value, out=self.master)

    def dequantized(self) -> np.ndarray:
        """Real values of the stored codes (read-only, cached until codes change)."""
        if self._values is None:
            values = dequantize(self.codes, self.fmt)
            values.setflags(write=False)
            self._values = values
        return self._values

    def stored_layers(self) -> Layers:
        return unflatten(self.dequantized(), self.layer_dims)

    def master_layers(self) -> Layers:
        return unflatten(self.master, self.layer_dims)

    def layer_codes(self) -> List[CodeTensor]:
        """Stored codes of each layer, weights then bias."""
        return [CodeTensor(self.codes[s.params].copy(), self.fmt) for s in self._slices]

    def value_table(self) -> np.ndarray:
        """(81, 4) action values of every observation, ordered by state_id."""
        if self._value_table is None:
            observations = np.array([o.as_array() for o in all_observations()])
            table = forward_layers(self.stored_layers(), observations)
            table.setflags(write=False)
            self._value_table = table
        return self._value_table

    def copy(self) -> "MLPPolicy":
        clone = MLPPolicy(self.layer_dims, self.fmt, self.master.copy())
        clone._set_codes(self.codes.copy())
        return clone

    def requantize(self, fmt: QFormat) -> "MLPPolicy":
        """Re-express the stored parameters in another Q format."""
        values = np.clip(self.dequantized(), fmt.min_value, fmt.max_value)
        return MLPPolicy(self.layer_dims, fmt, values)

    def __repr__(self) -> str:
        dims = "->".join(str(d) for d in self.layer_dims)
        return f"MLPPolicy({dims}, {self.fmt})"


def forward(policy: MLPPolicy, obs, fault_hook: Optional[FaultHook] = None) -> np.ndarray:
    """
    Action values of one observation, computed from the stored codes.

    Args:
        policy: Policy to evaluate
        obs: Observation (or any 4-sequence of -1/0/+1)
        fault_hook: Optional activation corruption hook

    Returns:
        (4,) array of action values

    Raises:
        PolicyShapeError: If obs does not match the input width
    """
    x = np.asarray(obs, dtype=np.float64)
    if x.shape != (policy.layer_dims[0],):
        raise PolicyShapeError(
            f"Observation of shape {x.shape} does not match input width {policy.layer_dims[0]}"
        )
    if fault_hook is None and hasattr(obs, "state_id"):
        return policy.value_table()[obs.state_id].copy()
    return forward_layers(policy.stored_layers(), x, fault_hook)


def select_action(values: np.ndarray, mode: ActionMode, rng: np.random.Generator) -> int:
    """
    Pick an action epsilon-greedily.

    Greedy ties go to the lowest index. A Greedy mode draws nothing from rng.

    Raises:
        CorruptedValuesError: If any value is NaN
    """
    values = np.asarray(values, dtype=np.float64)
    if np.isnan(values).any():
        raise CorruptedValuesError(values.tolist())
    if mode.epsilon > 0.0 and rng.random() < mode.epsilon:
        return int(rng.integers(len(values)))
    return int(np.argmax(values))


def flatten_params(policy: MLPPolicy) -> CodeTensor:
    """Copy of the stored codes in flat layer-major order."""
    return CodeTensor(policy.codes.copy(), policy.fmt)


def load_params(policy: MLPPolicy, flat: CodeTensor, keep_residual: bool = True) -> None:
    """
    Overwrite the stored codes with `flat`.

    With keep_residual, every parameter whose code changes keeps its
    sub-LSB master residual (master - dequantized code); unchanged codes
    leave the master weight untouched. Without it, master weights become
    exactly the dequantized codes.

    Raises:
        PolicyShapeError: On length or format mismatch
    """
    new_codes = np.asarray(flat.codes, dtype=np.int64).reshape(-1)
    if new_codes.size != policy.param_count:
        raise PolicyShapeError(
            f"Cannot load {new_codes.size} codes into a policy with {policy.param_count} parameters"
        )
    if flat.fmt != policy.fmt:
        raise PolicyShapeError(f"Cannot load {flat.fmt} codes into a {policy.fmt} policy")

    new_values = dequantize(new_codes, policy.fmt)
    if keep_residual:
        changed = new_codes != policy.codes
        residual = policy.master[changed] - policy.dequantized()[changed]
        policy.master[changed] = new_values[changed] + residual
        policy.clip_master()
    else:
        policy.master[:] = new_values
    policy._set_codes(new_codes)


def softmax_spread(values: np.ndarray) -> np.ndarray:
    """Population std of the softmax over the last axis."""
    values = np.asarray(values, dtype=np.float64)
    shifted = values - values.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs.std(axis=-1)


def consensus_std(policy: MLPPolicy) -> float:
    """Mean over all 81 observations of the std of the softmaxed action values."""
    return float(softmax_spread(policy.value_table()).mean())
