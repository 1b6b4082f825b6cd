"""Tests for reward-drop detection, checkpoints, recovery and range screening."""
import numpy as np
import pytest

from src.core.exceptions import CheckpointIntegrityError
from src.fedtrain import ServerState
from src.fxp import CodeTensor
from src.gridworld import Observation, all_observations
from src.guard import (
    NO_FAULT,
    Checkpoint,
    CheckpointManager,
    RangeDetector,
    RewardDropDetector,
    TrainingGuard,
    VerdictKind,
    build_range_detector,
    checkpoint_path,
    guarded_forward,
    guarded_value_table,
    load_checkpoint,
    recover,
    screen,
)
from src.guard.detector import Verdict
from src.guard.events import (
    AGENT_RESTORED,
    CLASSIFIED_PERSISTENT,
    CLASSIFIED_TRANSIENT,
    DETECTED,
    GUARD_EVENT_COLUMNS,
    RECOVERY_DEFERRED,
    SERVER_REVERTED,
)
from src.models import DetectorConfig
from src.policy import MLPPolicy, flatten_params, forward, load_params
from src.policy.mlp import forward_flat


def feed(detector, start, episodes, returns):
    """Feed the same returns for several episodes; collect every verdict."""
    verdicts = []
    for episode in range(start, start + episodes):
        verdicts += detector.update(episode, returns)
    return verdicts


def dropped(n, agents, low=0.5):
    return [low if i in agents else 1.0 for i in range(n)]


@pytest.fixture
def detector_config():
    return DetectorConfig(drop_percent=25.0, consecutive=5, window=10, checkpoint_every=1)


class TestRewardDropDetector:
    def test_constant_returns_never_flag(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=12)
        assert feed(detector, 1, 200, [1.0] * 12) == []

    def test_single_agent_drop(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=12)
        feed(detector, 1, 10, [1.0] * 12)
        verdicts = feed(detector, 11, 5, dropped(12, {3}))
        assert verdicts == [Verdict.agent_fault(3, streak_start=11)]

    def test_flagged_once_per_streak(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=12)
        feed(detector, 1, 10, [1.0] * 12)
        assert len(feed(detector, 11, 20, dropped(12, {3}))) == 1

    def test_short_streak_not_flagged(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=4)
        feed(detector, 1, 10, [1.0] * 4)
        assert feed(detector, 11, 4, dropped(4, {0})) == []
        assert feed(detector, 15, 1, [1.0] * 4) == []
        assert detector.streak(0) == 0
        assert feed(detector, 16, 4, dropped(4, {0})) == []

    def test_majority_is_server_fault(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=12)
        feed(detector, 1, 10, [1.0] * 12)
        verdicts = feed(detector, 11, 5, dropped(12, set(range(7))))
        assert verdicts == [Verdict.server_fault(streak_start=11)]

    def test_half_is_not_a_majority(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=12)
        feed(detector, 1, 10, [1.0] * 12)
        verdicts = feed(detector, 11, 5, dropped(12, set(range(6))))
        assert sorted(v.agent_id for v in verdicts) == list(range(6))
        assert all(v.kind == VerdictKind.AGENT_FAULT for v in verdicts)

    def test_warm_up(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=2)
        feed(detector, 1, 5, [1.0, 1.0])
        assert detector.baseline(0) is None
        assert feed(detector, 6, 5, [-10.0, 1.0]) == []
        assert detector.baseline(0) is not None

    def test_negative_baseline(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=1)
        feed(detector, 1, 10, [-1.0])
        assert detector.is_dropped(-1.3, -1.0)
        assert not detector.is_dropped(-1.2, -1.0)

    def test_baseline_frozen_during_streak(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=1)
        feed(detector, 1, 10, [1.0])
        feed(detector, 11, 3, [0.1])
        assert detector.baseline(0) == pytest.approx(1.0)
        assert detector.streak(0) == 3

    def test_reset_keeps_history(self, detector_config):
        detector = RewardDropDetector(detector_config, n_agents=2)
        feed(detector, 1, 10, [1.0, 1.0])
        feed(detector, 11, 3, [0.1, 1.0])
        detector.reset()
        assert detector.streak(0) == 0
        assert detector.baseline(0) == pytest.approx(1.0)

    def test_return_count_checked(self, detector_config):
        with pytest.raises(ValueError):
            RewardDropDetector(detector_config, n_agents=3).update(1, [1.0, 1.0])

    def test_window_must_cover_streak(self):
        with pytest.raises(ValueError):
            DetectorConfig(consecutive=50, window=10)


class TestCheckpoints:
    def test_cadence(self, policy):
        manager = CheckpointManager(every=5, layer_dims=policy.layer_dims, keep=10)
        codes = flatten_params(policy)
        taken = [r for r in range(0, 17) if manager.maybe_checkpoint(r, r * 10, codes) is not None]
        assert taken == [5, 10, 15]

    def test_keeps_last_snapshots(self, policy):
        manager = CheckpointManager(every=1, layer_dims=policy.layer_dims, keep=2)
        for r in range(1, 5):
            manager.maybe_checkpoint(r, r, flatten_params(policy))
        assert [c.round_index for c in manager.history] == [3, 4]

    def test_latest_before_episode(self, policy):
        manager = CheckpointManager(every=1, layer_dims=policy.layer_dims, keep=5)
        for r in range(1, 5):
            manager.maybe_checkpoint(r, r * 10, flatten_params(policy))
        assert manager.latest().episode == 40
        assert manager.latest(before_episode=35).episode == 30
        assert manager.latest(before_episode=30).episode == 20
        assert manager.latest(before_episode=10) is None

    def test_file_round_trip(self, policy, tmp_path):
        manager = CheckpointManager(every=1, layer_dims=policy.layer_dims, directory=tmp_path, keep=2)
        for r in range(1, 4):
            manager.maybe_checkpoint(r, r, flatten_params(policy))
        manager.close()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["round_000002.ckpt", "round_000003.ckpt"]
        loaded = load_checkpoint(checkpoint_path(tmp_path, 3))
        assert loaded.codes == flatten_params(policy)
        assert loaded.digest == manager.latest().digest
        assert loaded.round_index == 3

    def test_corrupted_file_rejected(self, policy, tmp_path):
        manager = CheckpointManager(every=1, layer_dims=policy.layer_dims, directory=tmp_path)
        manager.maybe_checkpoint(1, 1, flatten_params(policy))
        manager.close()
        path = checkpoint_path(tmp_path, 1)
        data = bytearray(path.read_bytes())
        data[40] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(path)

    def test_failed_write_drops_snapshot(self, policy, tmp_path, caplog):
        blocker = tmp_path / "not_a_dir"
        blocker.write_text("x")
        manager = CheckpointManager(every=1, layer_dims=policy.layer_dims, directory=blocker)
        manager.maybe_checkpoint(1, 1, flatten_params(policy))
        with caplog.at_level("ERROR"):
            assert manager.latest() is None
        manager.close()
        assert manager.write_failures == 1
        assert "Checkpoint write failed" in caplog.text


@pytest.fixture
def snapshot(rng) -> Checkpoint:
    donor = MLPPolicy.init(rng=rng)
    return Checkpoint.take(flatten_params(donor), round_index=5, episode=50, layer_dims=donor.layer_dims)


class TestRecover:
    def test_agent_restored_bit_identically(self, snapshot, rng):
        policies = [MLPPolicy.init(rng=rng) for _ in range(3)]
        before = [flatten_params(p) for p in policies]
        action = recover(Verdict.agent_fault(1), None, policies, snapshot)
        assert action == AGENT_RESTORED
        assert flatten_params(policies[1]) == snapshot.codes
        assert flatten_params(policies[0]) == before[0]
        assert flatten_params(policies[2]) == before[2]

    def test_server_fault_reverts_everything(self, snapshot, rng, q8):
        policies = [MLPPolicy.init(rng=rng) for _ in range(3)]
        server = ServerState(n_agents=3, fmt=q8)
        action = recover(Verdict.server_fault(), server, policies, snapshot)
        assert action == SERVER_REVERTED
        assert all(flatten_params(p) == snapshot.codes for p in policies)
        assert all(t == snapshot.codes for t in server.broadcast)
        assert server.consensus() == snapshot.codes

    def test_no_fault_is_noop(self, snapshot, policy):
        before = flatten_params(policy)
        assert recover(NO_FAULT, None, [policy], snapshot) is None
        assert flatten_params(policy) == before

    def test_deferred_without_checkpoint(self, policy):
        before = flatten_params(policy)
        assert recover(Verdict.agent_fault(0), None, [policy], None) == RECOVERY_DEFERRED
        assert flatten_params(policy) == before


class TestRangeDetector:
    def test_clean_policy_passes(self, policy):
        detector = build_range_detector(policy)
        assert not screen(policy, detector).any()

    def test_bounds_widened_by_margin(self, policy):
        detector = build_range_detector(policy)
        values = np.array(policy.dequantized())
        first = policy.layer_slices()[0]
        w_max = values[first.params].max()
        index = first.params.start
        values[index] = w_max
        assert not detector.screen(values)[index]
        values[index] = w_max + 0.2 * abs(w_max)
        assert detector.screen(values)[index]

    def test_forward_unchanged_when_clean(self, policy):
        detector = build_range_detector(policy)
        for obs in all_observations()[:10]:
            np.testing.assert_allclose(guarded_forward(policy, obs, detector), forward(policy, obs), rtol=0, atol=1e-12)
        np.testing.assert_allclose(guarded_value_table(policy, detector), policy.value_table(), rtol=0, atol=1e-12)

    def test_everything_flagged_gives_zeros(self, policy):
        detector = RangeDetector(policy.layer_dims, ((1.0, -1.0), (1.0, -1.0)))
        assert screen(policy, detector).all()
        np.testing.assert_array_equal(guarded_forward(policy, Observation(0, 1, -1, 0), detector), np.zeros(4))

    def test_out_of_range_weight_reads_as_zero(self, policy):
        detector = build_range_detector(policy)
        codes = policy.codes.copy()
        codes[7] = policy.fmt.max_code
        load_params(policy, CodeTensor(codes, policy.fmt), keep_residual=False)
        assert np.flatnonzero(screen(policy, detector)).tolist() == [7]

        obs = Observation(1, 0, -1, 0)
        expected = np.array(policy.dequantized())
        expected[7] = 0.0
        np.testing.assert_array_equal(
            guarded_forward(policy, obs, detector), forward_flat(expected, policy.layer_dims, obs)
        )


class TestTrainingGuard:
    def _checkpointed_guard(self, config, policies, n):
        guard = TrainingGuard(config, n_agents=n, comm_interval=1, layer_dims=policies[0].layer_dims)
        donors = [MLPPolicy.init(rng=np.random.default_rng(100 + i)) for i in range(3)]
        snapshots = {}
        for episode in range(1, 4):
            snapshots[episode] = flatten_params(donors[episode - 1])
            guard.after_round(episode, episode, snapshots[episode])
            guard.after_episode(episode, [1.0] * n, None, policies)
        return guard, snapshots

    def test_agent_fault_recovered_and_classified_transient(self, tiny_detector, rng):
        policies = [MLPPolicy.init(rng=rng) for _ in range(2)]
        guard, snapshots = self._checkpointed_guard(tiny_detector, policies, 2)
        assert guard.after_episode(4, [1.0, 0.5], None, policies) == []
        verdicts = guard.after_episode(5, [1.0, 0.5], None, policies)
        assert verdicts == [Verdict.agent_fault(1, streak_start=4)]
        # Newest checkpoint older than the streak start
        assert flatten_params(policies[1]) == snapshots[3]

        guard.after_episode(6, [1.0, 1.0], None, policies)
        guard.after_episode(7, [1.0, 1.0], None, policies)
        events = guard.events.to_dataframe()
        assert list(events.columns) == GUARD_EVENT_COLUMNS
        assert events["action_taken"].tolist() == [DETECTED, AGENT_RESTORED, CLASSIFIED_TRANSIENT]
        assert events["recovered_within_k"].iloc[-1] == True  # noqa: E712
        assert guard.detections == 1
        guard.close()

    def test_recurring_fault_is_persistent(self, tiny_detector, rng):
        policies = [MLPPolicy.init(rng=rng) for _ in range(2)]
        guard, _ = self._checkpointed_guard(tiny_detector, policies, 2)
        for episode in range(4, 8):
            guard.after_episode(episode, [1.0, 0.5], None, policies)
        actions = [e.action_taken for e in guard.events]
        assert CLASSIFIED_PERSISTENT in actions
        assert guard.detections == 2
        guard.close()

    def test_server_fault(self, tiny_detector, rng, q8):
        policies = [MLPPolicy.init(rng=rng) for _ in range(3)]
        guard, snapshots = self._checkpointed_guard(tiny_detector, policies, 3)
        server = ServerState(n_agents=3, fmt=q8)
        guard.after_episode(4, [0.5, 0.5, 1.0], server, policies)
        verdicts = guard.after_episode(5, [0.5, 0.5, 1.0], server, policies)
        assert [v.kind for v in verdicts] == [VerdictKind.SERVER_FAULT]
        assert all(flatten_params(p) == snapshots[3] for p in policies)
        assert guard.events.count(SERVER_REVERTED) == 1
        guard.close()

    def test_deferred_without_checkpoint(self, tiny_detector, rng):
        policies = [MLPPolicy.init(rng=rng) for _ in range(2)]
        before = flatten_params(policies[1])
        guard = TrainingGuard(tiny_detector, n_agents=2, comm_interval=1)
        for episode in range(1, 4):
            guard.after_episode(episode, [1.0, 1.0], None, policies)
        guard.after_episode(4, [1.0, 0.5], None, policies)
        guard.after_episode(5, [1.0, 0.5], None, policies)
        assert guard.events.count(RECOVERY_DEFERRED) == 1
        assert flatten_params(policies[1]) == before
        guard.close()
