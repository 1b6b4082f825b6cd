"""
Experiment configuration models.

These Pydantic models define the contract between TOML experiment files
and the simulator. They provide:
- Type and range validation before any episode runs
- Cross-field checks (epsilon schedule, detector window, fault persistence)
- A stable serialized form for run manifests

Fixed-point formats are written as "Q(1,i,f)" strings.
"""
import math
from enum import Enum
from typing import Any, List, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator, model_validator

from src.core.exceptions import ConfigError, FormatError
from src.fxp import DEFAULT_POLICY_FORMAT, QFormat
from src.gridworld import MAX_STEPS

_LOCATION_PATTERN_HELP = "agent_upload(i), agent_weights(i), activation_read(i), server_state, server_broadcast"


class LocationKind(str, Enum):
    AGENT_UPLOAD = "agent_upload"
    SERVER_STATE = "server_state"
    SERVER_BROADCAST = "server_broadcast"
    AGENT_WEIGHTS = "agent_weights"
    ACTIVATION_READ = "activation_read"

    @property
    def is_agent_side(self) -> bool:
        return self in (LocationKind.AGENT_UPLOAD, LocationKind.AGENT_WEIGHTS, LocationKind.ACTIVATION_READ)


class FlipMode(str, Enum):
    BOTH = "both"
    ZERO_TO_ONE = "zero_to_one"
    ONE_TO_ZERO = "one_to_zero"


class Persistence(str, Enum):
    TRANSIENT_READ = "transient_read"
    PERSISTENT_MEMORY = "persistent_memory"


class Phase(str, Enum):
    TRAINING = "training"
    INFERENCE = "inference"


def _parse_format(value: Any) -> QFormat:
    if isinstance(value, QFormat):
        return value
    if isinstance(value, str):
        try:
            return QFormat.parse(value)
        except FormatError as e:
            raise ValueError(e.message) from e
    raise ValueError(f"Expected a 'Q(1,i,f)' string, got {value!r}")


class FaultLocation(BaseModel):
    """
    Where a fault strikes.

    Agent-side kinds carry an agent id; agent_id None on an agent-side kind
    means every agent, each with its own independent draw.

    Example:
        >>> FaultLocation.parse("agent_weights(3)")
        FaultLocation(kind=<LocationKind.AGENT_WEIGHTS: 'agent_weights'>, agent_id=3)
    """
    model_config = ConfigDict(frozen=True)

    kind: LocationKind
    agent_id: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check_agent(self) -> "FaultLocation":
        if not self.kind.is_agent_side and self.agent_id is not None:
            raise ValueError(f"{self.kind.value} does not take an agent id")
        return self

    @classmethod
    def parse(cls, text: str) -> "FaultLocation":
        """Parse "kind" or "kind(agent_id)"; "kind(*)" targets every agent."""
        raw = text.strip().lower()
        agent_id = None
        if raw.endswith(")") and "(" in raw:
            raw, arg = raw[:-1].split("(", 1)
            arg = arg.strip()
            if arg not in ("", "*"):
                if not arg.isdigit():
                    raise ValueError(f"Bad agent id in fault location {text!r}")
                agent_id = int(arg)
        try:
            kind = LocationKind(raw.strip())
        except ValueError:
            raise ValueError(f"Unknown fault location {text!r}; expected one of {_LOCATION_PATTERN_HELP}")
        return cls(kind=kind, agent_id=agent_id)

    def __str__(self) -> str:
        if self.kind.is_agent_side:
            return f"{self.kind.value}({'*' if self.agent_id is None else self.agent_id})"
        return self.kind.value


def _coerce_location(value: Any) -> Any:
    return FaultLocation.parse(value) if isinstance(value, str) else value


class FaultSpec(BaseModel):
    """
    One scheduled fault.

    Attributes:
        location: Fault target
        ber: Independent per-bit flip probability
        mode: Flip direction constraint
        timing: Episode (training, 1-based) or step (inference, 0-based)
        persistence: TransientRead (one read) or PersistentMemory (stored codes)
        seed: Stream seed for this spec's bit draws
    """
    model_config = ConfigDict(frozen=True)

    location: FaultLocation
    ber: float = Field(..., ge=0.0, le=1.0)
    mode: FlipMode = FlipMode.BOTH
    timing: int = Field(default=0, ge=0)
    persistence: Persistence = Persistence.PERSISTENT_MEMORY
    seed: int = 0

    @field_validator("location", mode="before")
    @classmethod
    def _parse_location(cls, value: Any) -> Any:
        return _coerce_location(value)

    @model_validator(mode="before")
    @classmethod
    def _default_persistence(cls, data: Any) -> Any:
        # Activation reads are transient unless stated otherwise
        if isinstance(data, dict) and "persistence" not in data:
            location = _coerce_location(data.get("location"))
            if isinstance(location, FaultLocation) and location.kind == LocationKind.ACTIVATION_READ:
                data = {**data, "persistence": Persistence.TRANSIENT_READ}
        return data

    @model_validator(mode="after")
    def _check_persistence(self) -> "FaultSpec":
        kind = self.location.kind
        if self.persistence == Persistence.TRANSIENT_READ and kind not in (
            LocationKind.ACTIVATION_READ,
            LocationKind.AGENT_WEIGHTS,
        ):
            raise ValueError(f"transient_read applies only to activation or weight reads, not {kind.value}")
        if kind == LocationKind.ACTIVATION_READ and self.persistence != Persistence.TRANSIENT_READ:
            raise ValueError("activation_read faults are always transient_read")
        return self


class TrainConfig(BaseModel):
    """
    Federated training parameters.

    Attributes:
        n_agents: Agents (one map each)
        episodes: Episodes per agent (E)
        comm_interval: Episodes between aggregations (C)
        interval_multiplier: Factor applied to C after interval_change_episode
        gamma: Discount factor
        lr: Learning rate on master weights
        epsilon_start/epsilon_min/epsilon_decay: max(min, start * decay**episode)
        alpha0/alpha_tau: Smoothing-average schedule
        fmt: Stored-code format for policies
        eval_every: Greedy evaluation period in episodes (None = off)
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n_agents: int = Field(default=12, ge=1)
    episodes: int = Field(default=3000, ge=1)
    comm_interval: int = Field(default=10, ge=1)
    interval_multiplier: int = Field(default=1, ge=1)
    interval_change_episode: Optional[int] = Field(default=None, ge=0)
    gamma: float = Field(default=0.9, gt=0.0, lt=1.0)
    lr: float = Field(default=0.01, ge=0.0)
    epsilon_start: float = Field(default=1.0, ge=0.0, le=1.0)
    epsilon_min: float = Field(default=0.01, ge=0.0, le=1.0)
    epsilon_decay: float = Field(default=0.997, gt=0.0, le=1.0)
    alpha0: float = Field(default=0.9, le=1.0)
    alpha_tau: float = Field(default=100.0, gt=0.0)
    seed: int = 0
    fmt: QFormat = DEFAULT_POLICY_FORMAT
    layer_dims: Tuple[int, ...] = (4, 64, 4)
    max_steps: int = Field(default=MAX_STEPS, ge=1)
    sr_window: int = Field(default=100, ge=1)
    eval_every: Optional[int] = Field(default=None, ge=1)
    eval_attempts: int = Field(default=1000, ge=1)

    @field_validator("fmt", mode="before")
    @classmethod
    def _parse_fmt(cls, value: Any) -> QFormat:
        return _parse_format(value)

    @field_serializer("fmt")
    def _serialize_fmt(self, fmt: QFormat) -> str:
        return str(fmt)

    @model_validator(mode="after")
    def _check_schedules(self) -> "TrainConfig":
        if self.epsilon_min > self.epsilon_start:
            raise ValueError("epsilon_min must not exceed epsilon_start")
        if self.n_agents >= 2 and self.alpha0 < 1.0 / self.n_agents:
            raise ValueError(f"alpha0 must be >= 1/n_agents = {1.0 / self.n_agents:.4f}")
        if len(self.layer_dims) < 2 or self.layer_dims[0] != 4 or self.layer_dims[-1] != 4:
            raise ValueError("layer_dims must start and end with 4")
        return self

    def interval_at(self, episode: int) -> int:
        """Communication interval in force at `episode`."""
        if self.interval_change_episode is not None and episode > self.interval_change_episode:
            return self.comm_interval * self.interval_multiplier
        return self.comm_interval

    def aggregates_after(self, episode: int) -> bool:
        return self.n_agents >= 2 and episode % self.interval_at(episode) == 0


class DetectorConfig(BaseModel):
    """
    Reward-drop detector and checkpoint cadence.

    Attributes:
        drop_percent: p, percent drop below baseline counted as a drop
        consecutive: k, consecutive dropped episodes before a verdict
        window: W, trailing baseline window
        checkpoint_every: Aggregation rounds between checkpoints
    """
    model_config = ConfigDict(frozen=True)

    drop_percent: float = Field(default=25.0, gt=0.0)
    consecutive: int = Field(default=50, ge=1)
    window: int = Field(default=100, ge=1)
    checkpoint_every: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def _check_window(self) -> "DetectorConfig":
        if self.window < self.consecutive:
            raise ValueError("window (W) must be >= consecutive (k)")
        return self


DEFAULT_FAULT_EPISODES = [100, 300, 500, 700, 900]
DEFAULT_BERS = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]


class ExperimentSpec(BaseModel):
    """
    A fault-injection campaign: base config, sweep axes and repetitions.

    Cells are the cartesian product of the axes; repetition r of every
    cell trains with seed seed_base + r, so cells differ only in the fault.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = "experiment"
    phase: Phase = Phase.TRAINING
    train: TrainConfig = Field(default_factory=TrainConfig)
    detector: Optional[DetectorConfig] = None

    fault_episodes: List[int] = Field(default_factory=lambda: list(DEFAULT_FAULT_EPISODES))
    bers: List[float] = Field(default_factory=lambda: list(DEFAULT_BERS))
    locations: List[FaultLocation] = Field(
        default_factory=lambda: [FaultLocation(kind=LocationKind.SERVER_STATE)]
    )
    modes: List[FlipMode] = Field(default_factory=lambda: [FlipMode.BOTH])
    formats: Optional[List[QFormat]] = None
    agent_counts: Optional[List[int]] = None
    interval_multipliers: List[int] = Field(default_factory=lambda: [1])
    persistences: List[Persistence] = Field(default_factory=lambda: [Persistence.PERSISTENT_MEMORY])
    guard: List[bool] = Field(default_factory=lambda: [False])

    repetitions: int = Field(default=100, ge=1)
    seed_base: int = 0
    attempts: int = Field(default=1000, ge=1)
    fault_step: int = Field(default=0, ge=0)
    eval_every: int = Field(default=10, ge=1)
    recovery_budget: Optional[int] = Field(default=None, ge=1)
    required_sr: float = Field(default=0.96, ge=0.0, le=1.0)
    bundle: Optional[str] = None

    @field_validator("locations", mode="before")
    @classmethod
    def _parse_locations(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [_coerce_location(v) for v in value]
        return value

    @field_validator("formats", mode="before")
    @classmethod
    def _parse_formats(cls, value: Any) -> Any:
        if isinstance(value, list):
            return [_parse_format(v) for v in value]
        return value

    @field_serializer("formats")
    def _serialize_formats(self, formats: Optional[List[QFormat]]) -> Optional[List[str]]:
        return None if formats is None else [str(f) for f in formats]

    @field_serializer("locations")
    def _serialize_locations(self, locations: List[FaultLocation]) -> List[str]:
        return [str(loc) for loc in locations]

    @model_validator(mode="after")
    def _check_axes(self) -> "ExperimentSpec":
        axes = {
            "fault_episodes": self.fault_episodes,
            "bers": self.bers,
            "locations": self.locations,
            "modes": self.modes,
            "interval_multipliers": self.interval_multipliers,
            "persistences": self.persistences,
            "guard": self.guard,
        }
        if self.formats is not None:
            axes["formats"] = self.formats
        if self.agent_counts is not None:
            axes["agent_counts"] = self.agent_counts
        for name, values in axes.items():
            if len(values) == 0:
                raise ValueError(f"Sweep axis '{name}' is empty")
        for ber in self.bers:
            if not 0.0 <= ber <= 1.0 or math.isnan(ber):
                raise ValueError(f"BER {ber} outside [0, 1]")
        for n in self.agent_count_axis:
            if n < 1:
                raise ValueError(f"Agent count {n} must be >= 1")
        if self.phase == Phase.TRAINING:
            for episode in self.fault_episodes:
                if not 1 <= episode <= self.train.episodes:
                    raise ValueError(f"Fault episode {episode} outside 1..{self.train.episodes}")
        return self

    @property
    def format_axis(self) -> List[QFormat]:
        return list(self.formats) if self.formats is not None else [self.train.fmt]

    @property
    def agent_count_axis(self) -> List[int]:
        return list(self.agent_counts) if self.agent_counts is not None else [self.train.n_agents]


ModelT = TypeVar("ModelT", bound=BaseModel)


def build_model(model: Type[ModelT], data: Any) -> ModelT:
    """
    Validate `data` into `model`, reporting failures as ConfigError.

    Raises:
        ConfigError: With the first offending field
    """
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first.get("loc", ())) or None
        raise ConfigError(f"Invalid {model.__name__}: {first.get('msg')}", field=field) from e
