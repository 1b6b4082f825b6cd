"""
Fault plans - scheduling FaultSpecs onto the training and inference flow.

Hook points, in the order they occur around one training episode:

    PRE_EPISODE       agent weight memory, before the episode's first step
    ACTIVATION_READ   one corrupted read (weights or activations) at step 0
    AGENT_UPLOAD      an agent's upload, before aggregation
    SERVER_AGGREGATE  the server's aggregated parameters (one mask, all agents)
    SERVER_BROADCAST  each server-to-agent link (independent masks)

At inference, persistent weight faults use PRE_EPISODE once before the
first attempt and transient reads use INFERENCE_STEP at their step.

A spec fires at the first hook occurrence whose time is >= its timing,
and only once (once per attempt for INFERENCE_STEP reads).
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Hashable, List, Optional, Sequence, Set, Tuple

import numpy as np

from src.core.exceptions import FaultPlanError
from src.core.logging_config import LoggerMixin
from src.core.validators import validate_fault_location, validate_fault_timing
from src.faultinj.injector import InjectionLog, apply_flip_mask, draw_flip_mask, inject
from src.fxp import CodeTensor, QFormat
from src.fxp.codes import dequantize, quantize
from src.gridworld import MAX_STEPS
from src.models.experiment import FaultSpec, FlipMode, LocationKind, Persistence, Phase
from src.policy import MLPPolicy, forward_flat


class HookPoint(str, Enum):
    PRE_EPISODE = "pre_episode"
    AGENT_UPLOAD = "agent_upload"
    SERVER_AGGREGATE = "server_aggregate"
    SERVER_BROADCAST = "server_broadcast"
    ACTIVATION_READ = "activation_read"
    INFERENCE_STEP = "inference_step"


_READ_HOOKS = (HookPoint.ACTIVATION_READ, HookPoint.INFERENCE_STEP)

_TRAINING_HOOKS = {
    LocationKind.AGENT_WEIGHTS: HookPoint.PRE_EPISODE,
    LocationKind.AGENT_UPLOAD: HookPoint.AGENT_UPLOAD,
    LocationKind.SERVER_STATE: HookPoint.SERVER_AGGREGATE,
    LocationKind.SERVER_BROADCAST: HookPoint.SERVER_BROADCAST,
}


def hook_for(spec: FaultSpec, phase: Phase) -> HookPoint:
    """Hook point at which a spec fires."""
    transient = spec.persistence == Persistence.TRANSIENT_READ
    if phase == Phase.INFERENCE:
        return HookPoint.INFERENCE_STEP if transient else HookPoint.PRE_EPISODE
    if transient:
        return HookPoint.ACTIVATION_READ
    return _TRAINING_HOOKS[spec.location.kind]


@dataclass
class _MaskedRead:
    masks: List[np.ndarray]
    mode: FlipMode
    location: str


@dataclass
class ReadFault:
    """
    A one-step corrupted read with its bit draws already made.

    Weight reads corrupt a copy of the stored codes; activation reads
    corrupt the hidden activations on their way to the next layer. The
    policy's stored codes are never modified.

    Attributes:
        step: Step index (within the episode) at which the read happens
        agent: Agent whose read is corrupted
        time: Episode (training) or attempt (inference) for the log
    """
    step: int
    agent: int
    time: int
    weight_reads: List[_MaskedRead] = field(default_factory=list)
    activation_reads: List[_MaskedRead] = field(default_factory=list)

    def merge(self, other: "ReadFault") -> "ReadFault":
        return ReadFault(
            step=self.step,
            agent=self.agent,
            time=self.time,
            weight_reads=self.weight_reads + other.weight_reads,
            activation_reads=self.activation_reads + other.activation_reads,
        )

    def values(self, policy: MLPPolicy, obs, weight_filter=None) -> Tuple[np.ndarray, InjectionLog]:
        """
        Action values of the corrupted read.

        Args:
            policy: Policy whose memory is read
            obs: Observation at the read step
            weight_filter: Optional function applied to the real weight
                vector before the forward pass (range guard)

        Returns:
            Tuple of (action values, flips performed by this read)
        """
        log = InjectionLog()
        codes = CodeTensor(policy.codes, policy.fmt)
        for read in self.weight_reads:
            codes, flips = apply_flip_mask(codes, read.masks[0], read.mode, read.location, self.agent, self.time)
            log.extend(flips)
        weights = codes.dequantize()
        if weight_filter is not None:
            weights = weight_filter(weights)

        hook = None
        if self.activation_reads:
            fmt = policy.fmt

            def hook(layer: int, activations: np.ndarray) -> np.ndarray:
                for read in self.activation_reads:
                    activations = _corrupt_activations(activations, read, layer, fmt, self, log)
                return activations

        return forward_flat(weights, policy.layer_dims, obs, hook), log


def _corrupt_activations(
    activations: np.ndarray,
    read: _MaskedRead,
    layer: int,
    fmt: QFormat,
    fault: ReadFault,
    log: InjectionLog,
) -> np.ndarray:
    # Only flipped entries take the corrupted value; the rest pass through unquantized
    codes = CodeTensor(quantize(activations.reshape(-1), fmt), fmt)
    corrupted, flips = apply_flip_mask(codes, read.masks[layer], read.mode, read.location, fault.agent, fault.time)
    if not len(flips):
        return activations
    log.extend(flips)
    touched = corrupted.codes != codes.codes
    out = activations.reshape(-1).copy()
    out[touched] = dequantize(corrupted.codes[touched], fmt)
    return out.reshape(activations.shape)


def prepare_read(
    spec: FaultSpec,
    rng: np.random.Generator,
    agent: int,
    time: int,
    layer_dims: Sequence[int],
    fmt: QFormat,
    step: Optional[int] = None,
) -> ReadFault:
    """Draw the bit masks of one transient read of `spec`."""
    location = str(spec.location)
    fault = ReadFault(step=spec.timing if step is None else step, agent=agent, time=time)
    if spec.location.kind == LocationKind.AGENT_WEIGHTS:
        size = sum((a + 1) * b for a, b in zip(layer_dims[:-1], layer_dims[1:]))
        mask = draw_flip_mask(size, fmt.total_bits, spec.ber, rng)
        fault.weight_reads.append(_MaskedRead([mask], spec.mode, location))
    else:
        masks = [draw_flip_mask(width, fmt.total_bits, spec.ber, rng) for width in layer_dims[1:-1]]
        fault.activation_reads.append(_MaskedRead(masks, spec.mode, location))
    return fault


@dataclass
class HookContext:
    """
    What a hook point exposes to the plan.

    Attributes:
        time: Episode (training) or step/attempt reference (inference)
        codes: Parameter sets by agent, for memory and link hooks
        agents: Agents taking a read, for read hooks
        layer_dims/fmt: Policy geometry, for read hooks
        attempt: Inference attempt id; reads fire once per attempt
    """
    time: int
    codes: Dict[int, CodeTensor] = field(default_factory=dict)
    agents: Sequence[int] = ()
    layer_dims: Sequence[int] = (4, 64, 4)
    fmt: Optional[QFormat] = None
    attempt: Optional[int] = None


@dataclass
class HookResult:
    codes: Dict[int, CodeTensor] = field(default_factory=dict)
    reads: Dict[int, ReadFault] = field(default_factory=dict)
    log: InjectionLog = field(default_factory=InjectionLog)


class FaultPlan(LoggerMixin):
    """
    Validated fault specs with their RNG streams and fired-once bookkeeping.

    Each spec draws from its own stream seeded by (campaign seed, spec
    index, spec seed), so firing order across specs never shifts draws.

    Example:
        >>> plan = FaultPlan([spec], n_agents=12, episodes=3000, seed=7)
        >>> result = apply_fault_plan(plan, HookPoint.SERVER_AGGREGATE, HookContext(time=900, codes=outputs))
    """

    def __init__(
        self,
        specs: Sequence[FaultSpec] = (),
        phase: Phase = Phase.TRAINING,
        n_agents: int = 1,
        episodes: int = 1,
        max_steps: int = MAX_STEPS,
        seed: int = 0,
    ):
        self.specs = list(specs)
        self.phase = phase
        self.n_agents = n_agents
        for index, spec in enumerate(self.specs):
            ok, error = validate_fault_location(spec.location, n_agents)
            if ok:
                ok, error = validate_fault_timing(spec, phase, episodes, max_steps)
            if not ok:
                raise FaultPlanError(f"Fault spec {index}: {error}", details=str(spec.location))

        self._hooks = [hook_for(spec, phase) for spec in self.specs]
        self._rngs = [
            np.random.default_rng(np.random.SeedSequence([seed, index, spec.seed]))
            for index, spec in enumerate(self.specs)
        ]
        self._fired: Set[Tuple[int, Hashable]] = set()
        self.log = InjectionLog()

    def __len__(self) -> int:
        return len(self.specs)

    @property
    def is_empty(self) -> bool:
        return not self.specs

    def has_hook(self, hook: HookPoint) -> bool:
        return hook in self._hooks

    def fired(self, index: int, key: Hashable = None) -> bool:
        return (index, key) in self._fired

    def _targets(self, spec: FaultSpec, available: Sequence[int]) -> List[int]:
        if spec.location.agent_id is None:
            return sorted(available)
        return [spec.location.agent_id] if spec.location.agent_id in available else []

    def due(self, hook: HookPoint, time: int, key: Hashable = None) -> List[int]:
        """Indices of specs that fire at this hook occurrence."""
        return [
            i
            for i, spec in enumerate(self.specs)
            if self._hooks[i] == hook and (i, key) not in self._fired and self._timing_reached(spec, hook, time)
        ]

    def _timing_reached(self, spec: FaultSpec, hook: HookPoint, time: int) -> bool:
        # Inference reads carry their step inside the ReadFault
        if hook == HookPoint.INFERENCE_STEP or (self.phase == Phase.INFERENCE and hook == HookPoint.PRE_EPISODE):
            return True
        return time >= spec.timing

    def fire_codes(self, hook: HookPoint, context: HookContext) -> HookResult:
        """Corrupt parameter sets at a memory or link hook."""
        result = HookResult(codes=dict(context.codes))
        for index in self.due(hook, context.time):
            spec, rng = self.specs[index], self._rngs[index]
            location = str(spec.location)
            targets = self._targets(spec, list(result.codes))

            if spec.location.kind == LocationKind.SERVER_STATE and targets:
                # One corruption of server memory reaches every agent identically
                first = result.codes[targets[0]]
                mask = draw_flip_mask(first.size, first.fmt.total_bits, spec.ber, rng)
                for agent in targets:
                    result.codes[agent], flips = apply_flip_mask(
                        result.codes[agent], mask, spec.mode, location, agent, context.time
                    )
                    result.log.extend(flips)
            else:
                for agent in targets:
                    result.codes[agent], flips = inject(
                        result.codes[agent], spec.ber, spec.mode, rng, location, agent, context.time
                    )
                    result.log.extend(flips)

            self._fired.add((index, None))
            self.logger.info(
                f"Fault fired: {location} ber={spec.ber:g} mode={spec.mode.value} "
                f"at {hook.value} t={context.time}"
            )
        self.log.extend(result.log)
        return result

    def prepare_reads(self, hook: HookPoint, context: HookContext) -> HookResult:
        """Draw the transient reads due at a read hook, keyed by agent."""
        result = HookResult()
        key = context.attempt
        for index in self.due(hook, context.time, key):
            spec, rng = self.specs[index], self._rngs[index]
            step = 0 if hook == HookPoint.ACTIVATION_READ else spec.timing
            for agent in self._targets(spec, context.agents):
                read = prepare_read(spec, rng, agent, context.time, context.layer_dims, context.fmt, step=step)
                result.reads[agent] = result.reads[agent].merge(read) if agent in result.reads else read
            self._fired.add((index, key))
            if key is None:
                self.logger.info(f"Transient read armed: {spec.location} ber={spec.ber:g} t={context.time}")
        return result

    def record(self, log: InjectionLog) -> None:
        """Add flips performed by reads to the plan's log."""
        self.log.extend(log)


def apply_fault_plan(plan: Optional[FaultPlan], hook: HookPoint, context: HookContext) -> HookResult:
    """
    Dispatch one hook occurrence to the plan.

    Memory and link hooks return the (possibly corrupted) parameter sets in
    context.codes; read hooks return ReadFaults by agent. An empty or
    missing plan is a no-op.
    """
    if plan is None or plan.is_empty:
        return HookResult(codes=dict(context.codes))
    if hook in _READ_HOOKS:
        return plan.prepare_reads(hook, context)
    return plan.fire_codes(hook, context)
