"""Tests for the bit-flip injector and fault plans."""
import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import binom, chisquare

from src.core.exceptions import ConfigError, FaultPlanError, FormatError
from src.faultinj import (
    FaultClass,
    FaultPlan,
    HookContext,
    HookPoint,
    apply_fault_plan,
    fault_class,
    hook_for,
    inject,
    inject_bit,
)
from src.fxp import CodeTensor, QFormat
from src.fxp.codes import to_unsigned
from src.gridworld import Observation
from src.models import FaultLocation, FaultSpec, FlipMode, LocationKind, Persistence, Phase, build_model
from src.policy import flatten_params, forward


def all_codes(fmt: QFormat) -> CodeTensor:
    return CodeTensor(np.arange(fmt.min_code, fmt.max_code + 1), fmt)


def bits_changed(before: CodeTensor, after: CodeTensor) -> int:
    diff = to_unsigned(before.codes, before.fmt) ^ to_unsigned(after.codes, after.fmt)
    return int(sum(bin(int(d)).count("1") for d in diff))


def binomial_gof_pvalue(counts: np.ndarray, n: int, p: float) -> float:
    """Chi-square goodness of fit of observed counts against Binomial(n, p), tails pooled."""
    dist = binom(n, p)
    low, high = int(dist.ppf(0.005)), int(dist.ppf(0.995))
    edges = np.arange(low, high + 1)
    expected = np.diff(np.concatenate([[0.0], dist.cdf(edges[:-1]), [1.0]]))
    observed = np.array(
        [np.sum(counts <= low)]
        + [np.sum(counts == k) for k in edges[1:-1]]
        + [np.sum(counts >= high)]
    )
    expected = expected * counts.size
    return chisquare(observed, expected * observed.sum() / expected.sum()).pvalue


class TestInject:
    def test_ber_zero_is_identity(self, q8, rng):
        codes = all_codes(q8)
        out, log = inject(codes, 0.0, FlipMode.BOTH, rng)
        assert out == codes
        assert len(log) == 0

    def test_ber_one_complements(self, q8, rng):
        codes = all_codes(q8)
        out, log = inject(codes, 1.0, FlipMode.BOTH, rng)
        np.testing.assert_array_equal(out.codes, -codes.codes - 1)
        assert len(log) == codes.size * q8.total_bits

    def test_input_not_modified(self, q8, rng):
        codes = all_codes(q8)
        snapshot = codes.codes.copy()
        inject(codes, 0.5, FlipMode.BOTH, rng)
        np.testing.assert_array_equal(codes.codes, snapshot)

    def test_log_counts_actual_flips(self, q8, rng):
        codes = all_codes(q8)
        for mode in FlipMode:
            out, log = inject(codes, 0.3, mode, rng)
            assert len(log) == bits_changed(codes, out)
            for record in log:
                assert record.new_bit == 1 - record.old_bit

    def test_direction_constraints_exhaustive(self, q8, rng):
        codes = all_codes(q8)
        before = to_unsigned(codes.codes, q8)
        for _ in range(5):
            up, _ = inject(codes, 0.5, FlipMode.ZERO_TO_ONE, rng)
            down, _ = inject(codes, 0.5, FlipMode.ONE_TO_ZERO, rng)
            assert not np.any(before & ~to_unsigned(up.codes, q8))
            assert not np.any(~before & to_unsigned(down.codes, q8) & 0xFF)

    def test_reproducible(self, q8):
        codes = all_codes(q8)
        a, log_a = inject(codes, 0.05, FlipMode.BOTH, np.random.default_rng(11), "server_state", None, 900)
        b, log_b = inject(codes, 0.05, FlipMode.BOTH, np.random.default_rng(11), "server_state", None, 900)
        assert a == b
        assert log_a.records == log_b.records

    def test_composition(self, q8):
        codes = all_codes(q8)
        clean, empty = inject(codes, 0.0, FlipMode.BOTH, np.random.default_rng(1))
        assert clean == codes
        hit, log = inject(clean, 0.1, FlipMode.BOTH, np.random.default_rng(2))
        assert len(empty + log) == len(log)

    @pytest.mark.parametrize("ber", [1e-2, 1e-3])
    def test_flip_count_binomial(self, q8, ber):
        rng = np.random.default_rng(99)
        codes = CodeTensor(np.zeros(644), q8)
        counts = np.array([len(inject(codes, ber, FlipMode.BOTH, rng)[1]) for _ in range(10_000)])
        n = 644 * q8.total_bits
        assert abs(counts.mean() - n * ber) < 5 * np.sqrt(n * ber * (1 - ber) / counts.size)
        assert binomial_gof_pvalue(counts, n, ber) > 0.01

    def test_inject_bit(self, q8):
        codes = CodeTensor(np.zeros(4), q8)
        out, log = inject_bit(codes, offset=2, bit=7)
        np.testing.assert_array_equal(out.codes, [0, 0, -128, 0])
        assert len(log) == 1
        record = log.records[0]
        assert (record.offset, record.bit, record.old_bit, record.new_bit) == (2, 7, 0, 1)
        with pytest.raises(FormatError):
            inject_bit(codes, offset=4, bit=0)

    def test_log_dataframe(self, q8, rng):
        _, log = inject(all_codes(q8), 0.1, FlipMode.BOTH, rng, "agent_weights(3)", 3, 17)
        df = log.to_dataframe()
        assert list(df.columns) == ["location", "agent", "time", "offset", "bit", "old_bit", "new_bit"]
        assert set(df["agent"]) == {3} and set(df["time"]) == {17}


class TestFaultSpec:
    def test_location_parse(self):
        assert FaultLocation.parse("agent_weights(3)") == FaultLocation(kind=LocationKind.AGENT_WEIGHTS, agent_id=3)
        assert FaultLocation.parse("agent_upload(*)").agent_id is None
        assert str(FaultLocation.parse("server_state")) == "server_state"
        with pytest.raises(ValueError):
            FaultLocation.parse("server_state(1)")
        with pytest.raises(ValueError):
            FaultLocation.parse("gpu_memory")

    def test_activation_read_defaults_to_transient(self):
        spec = FaultSpec(location="activation_read(0)", ber=0.01)
        assert spec.persistence == Persistence.TRANSIENT_READ

    def test_transient_needs_a_read(self):
        with pytest.raises(ValidationError):
            FaultSpec(location="server_state", ber=0.01, persistence="transient_read")
        with pytest.raises(ConfigError):
            build_model(FaultSpec, {"location": "server_broadcast", "ber": 0.01, "persistence": "transient_read"})

    def test_ber_range(self):
        with pytest.raises(ValidationError):
            FaultSpec(location="server_state", ber=1.5)

    @pytest.mark.parametrize(
        "location, expected",
        [
            ("agent_weights(3)", FaultClass.AGENT_FAULT),
            ("agent_upload(1)", FaultClass.AGENT_FAULT),
            ("activation_read(0)", FaultClass.AGENT_FAULT),
            ("server_state", FaultClass.SERVER_FAULT),
            ("server_broadcast", FaultClass.SERVER_FAULT),
        ],
    )
    def test_fault_class(self, location, expected):
        assert fault_class(FaultLocation.parse(location)) == expected

    def test_hooks(self):
        weights = FaultSpec(location="agent_weights(0)", ber=0.1)
        read = FaultSpec(location="agent_weights(0)", ber=0.1, persistence="transient_read")
        assert hook_for(weights, Phase.TRAINING) == HookPoint.PRE_EPISODE
        assert hook_for(read, Phase.TRAINING) == HookPoint.ACTIVATION_READ
        assert hook_for(read, Phase.INFERENCE) == HookPoint.INFERENCE_STEP
        assert hook_for(FaultSpec(location="server_state", ber=0.1), Phase.TRAINING) == HookPoint.SERVER_AGGREGATE


class TestFaultPlan:
    def test_validation(self):
        with pytest.raises(FaultPlanError):
            FaultPlan([FaultSpec(location="agent_weights(12)", ber=0.1, timing=5)], n_agents=12, episodes=10)
        with pytest.raises(FaultPlanError):
            FaultPlan([FaultSpec(location="server_state", ber=0.1, timing=5)], n_agents=1, episodes=10)
        with pytest.raises(FaultPlanError):
            FaultPlan([FaultSpec(location="server_state", ber=0.1, timing=11)], n_agents=2, episodes=10)
        with pytest.raises(FaultPlanError):
            FaultPlan([FaultSpec(location="server_state", ber=0.1)], Phase.INFERENCE, n_agents=2)
        with pytest.raises(FaultPlanError):
            FaultPlan(
                [FaultSpec(location="activation_read(0)", ber=0.1, timing=200)], Phase.INFERENCE, n_agents=1
            )

    def test_empty_plan_is_noop(self, q8):
        codes = {0: CodeTensor(np.arange(8), q8)}
        result = apply_fault_plan(FaultPlan(), HookPoint.SERVER_AGGREGATE, HookContext(time=1, codes=codes))
        assert result.codes[0] == codes[0]
        assert len(result.log) == 0
        assert apply_fault_plan(None, HookPoint.PRE_EPISODE, HookContext(time=1, codes=codes)).codes == codes

    def test_fires_once_at_first_hook_past_timing(self, q8):
        plan = FaultPlan([FaultSpec(location="server_state", ber=1.0, timing=5)], n_agents=2, episodes=20)
        codes = {0: CodeTensor(np.zeros(3), q8), 1: CodeTensor(np.zeros(3), q8)}
        assert len(plan.fire_codes(HookPoint.SERVER_AGGREGATE, HookContext(time=3, codes=codes)).log) == 0
        first = plan.fire_codes(HookPoint.SERVER_AGGREGATE, HookContext(time=6, codes=codes))
        assert len(first.log) == 2 * 3 * 8
        assert len(plan.fire_codes(HookPoint.SERVER_AGGREGATE, HookContext(time=9, codes=codes)).log) == 0
        assert len(plan.log) == 2 * 3 * 8

    def test_server_state_shares_one_mask(self, q8):
        plan = FaultPlan([FaultSpec(location="server_state", ber=0.3, timing=1)], n_agents=3, episodes=5, seed=4)
        base = CodeTensor(np.arange(-64, 64), q8)
        result = plan.fire_codes(HookPoint.SERVER_AGGREGATE, HookContext(time=1, codes={i: base for i in range(3)}))
        assert result.codes[0] == result.codes[1] == result.codes[2]
        assert result.codes[0] != base

    def test_broadcast_masks_independent(self, q8):
        plan = FaultPlan([FaultSpec(location="server_broadcast", ber=0.3, timing=1)], n_agents=2, episodes=5, seed=4)
        base = CodeTensor(np.arange(-64, 64), q8)
        result = plan.fire_codes(HookPoint.SERVER_BROADCAST, HookContext(time=1, codes={0: base, 1: base}))
        assert result.codes[0] != result.codes[1]

    def test_single_agent_target(self, q8):
        plan = FaultPlan([FaultSpec(location="agent_upload(1)", ber=1.0, timing=1)], n_agents=3, episodes=5)
        base = CodeTensor(np.zeros(4), q8)
        result = plan.fire_codes(HookPoint.AGENT_UPLOAD, HookContext(time=1, codes={i: base for i in range(3)}))
        assert result.codes[0] == base and result.codes[2] == base
        assert result.codes[1] != base
        assert set(result.log.flips_by_agent()) == {1}


class TestTransientReads:
    def _plan(self, location: str, ber: float, step: int = 3) -> FaultPlan:
        spec = FaultSpec(location=location, ber=ber, timing=step, persistence="transient_read")
        return FaultPlan([spec], Phase.INFERENCE, n_agents=1, seed=5)

    def _read(self, plan: FaultPlan, policy, attempt: int):
        context = HookContext(time=attempt, agents=[0], layer_dims=policy.layer_dims, fmt=policy.fmt, attempt=attempt)
        return apply_fault_plan(plan, HookPoint.INFERENCE_STEP, context).reads.get(0)

    def test_weight_read_leaves_memory_untouched(self, policy):
        stored = flatten_params(policy)
        obs = Observation(0, 0, 1, -1)
        read = self._read(self._plan("agent_weights(0)", 1.0), policy, attempt=0)
        assert read.step == 3
        values, log = read.values(policy, obs)
        assert len(log) == policy.param_count * policy.fmt.total_bits
        assert not np.array_equal(values, forward(policy, obs))
        assert flatten_params(policy) == stored

    def test_activation_read_perturbs_one_forward(self, policy):
        obs = Observation(1, 0, 0, -1)
        read = self._read(self._plan("activation_read(0)", 1.0), policy, attempt=0)
        values, log = read.values(policy, obs)
        assert len(log) == 64 * policy.fmt.total_bits
        assert not np.array_equal(values, forward(policy, obs))

    def test_fresh_read_per_attempt(self, policy):
        plan = self._plan("agent_weights(0)", 0.01)
        first = self._read(plan, policy, attempt=0)
        assert self._read(plan, policy, attempt=0) is None
        second = self._read(plan, policy, attempt=1)
        assert first is not None and second is not None
        assert not np.array_equal(first.weight_reads[0].masks[0], second.weight_reads[0].masks[0])
