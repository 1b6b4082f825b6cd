"""Tests for campaign enumeration, statistics, bundles, reports and the CLI."""
import json

import numpy as np
import pandas as pd
import pytest

from src.core.config import PROJECT_ROOT, get_settings
from src.core.exceptions import CheckpointIntegrityError, ConfigError, FaultPlanError, NotConvergedError, ReportError
from src.gridworld import load_map
from src.harness import (
    PolicyBundle,
    converged_or_raise,
    enumerate_cells,
    load_experiment_spec,
    repetition_seed,
    report,
    run_convergence_study,
    run_inference_sweep,
    run_mitigation,
    run_training_sweep,
    validate_cells,
)
from src.harness.campaigns import TRAINING_CELL_COLUMNS, clean_screen_flags, resolve_maps
from src.harness.cli import main
from src.harness.reporting import ResultFormatter, heatmap_figure, heatmap_groups, read_csv, write_csv
from src.harness.stats import STAT_COLUMNS, RepetitionResult, ci_half_width, monotone_non_increasing, summarize
from src.models import ExperimentSpec, Phase, TrainConfig, build_model
from src.policy import MLPPolicy, flatten_params, param_count
from tests.conftest import OPEN_MAP

TINY_TRAIN = {
    "n_agents": 2,
    "episodes": 6,
    "comm_interval": 2,
    "max_steps": 20,
    "epsilon_decay": 0.9,
    "alpha_tau": 5.0,
    "eval_attempts": 5,
}


def walker_policy() -> MLPPolicy:
    """Moves right until the right neighbour is off-grid, then down."""
    master = np.zeros(param_count((4, 1, 4)))
    master[2] = 1.0                          # W1[right, 0]
    master[4] = 1.0                          # b1: hidden = relu(right + 1)
    master[5 + 2] = 2.0                      # W2[0, right]
    master[9:13] = [-3.0, 0.0, -1.0, -3.0]   # b2: up, down, right, left
    return MLPPolicy((4, 1, 4), master=master)


def open_maps(n: int):
    return [load_map(OPEN_MAP, map_id=i) for i in range(n)]


@pytest.fixture
def walker_bundle() -> PolicyBundle:
    config = TrainConfig(n_agents=2, max_steps=30, layer_dims=(4, 1, 4))
    return PolicyBundle([walker_policy(), walker_policy()], open_maps(2), config, rounds=3, name="walker")


def training_spec(**overrides) -> ExperimentSpec:
    data = {
        "name": "tiny",
        "train": TINY_TRAIN,
        "fault_episodes": [3],
        "bers": [0.0, 0.5],
        "locations": ["server_state"],
        "repetitions": 2,
        "attempts": 5,
    }
    data.update(overrides)
    return build_model(ExperimentSpec, data)


def inference_spec(**overrides) -> ExperimentSpec:
    data = {
        "name": "tiny_infer",
        "phase": "inference",
        "train": {"n_agents": 2, "max_steps": 30},
        "bers": [0.0, 1.0],
        "locations": ["agent_weights(*)"],
        "persistences": ["persistent_memory", "transient_read"],
        "repetitions": 2,
        "attempts": 5,
        "required_sr": 0.96,
    }
    data.update(overrides)
    return build_model(ExperimentSpec, data)


class TestStats:
    def test_ci_half_width(self):
        assert ci_half_width(0.96, 1000) <= 0.0125
        assert ci_half_width(0.96, 1000) == pytest.approx(0.0121, abs=1e-4)
        assert ci_half_width(1.0, 10) == 0.0
        with pytest.raises(ValueError):
            ci_half_width(0.5, 0)

    def test_summarize_ignores_completion_order(self):
        results = [RepetitionResult(rep=r, success_rate=sr, flips=r) for r, sr in enumerate([1.0, 0.5, 0.0])]
        forward = summarize({"cell_id": 0}, results)
        backward = summarize({"cell_id": 0}, list(reversed(results)))
        assert forward == backward
        assert forward.mean_sr == pytest.approx(0.5)
        assert forward.mean_flips == pytest.approx(1.0)
        assert forward.repetitions == 3

    def test_monotone(self):
        assert monotone_non_increasing([0.9, 0.9, 0.5, 0.1])
        assert not monotone_non_increasing([0.5, 0.6])
        assert monotone_non_increasing([0.5, 0.51], tolerance=0.02)


class TestCells:
    def test_count_and_order(self):
        spec = training_spec(fault_episodes=[2, 4], bers=[0.1, 0.01], locations=["server_state", "agent_weights(*)"])
        cells = enumerate_cells(spec)
        assert len(cells) == 8
        assert [c.cell_id for c in cells] == list(range(8))
        assert [c.timing for c in cells] == [2, 2, 2, 2, 4, 4, 4, 4]
        assert [c.ber for c in cells[:4]] == [0.1, 0.1, 0.01, 0.01]
        assert [str(c.location) for c in cells[:2]] == ["server_state", "agent_weights(*)"]

    def test_empty_axis_rejected(self):
        with pytest.raises(ConfigError):
            build_model(ExperimentSpec, {"bers": []})

    def test_fault_episode_outside_run_rejected(self):
        with pytest.raises(ConfigError):
            training_spec(fault_episodes=[7])

    def test_server_fault_needs_a_server(self):
        spec = training_spec(agent_counts=[1])
        with pytest.raises(FaultPlanError):
            validate_cells(spec, enumerate_cells(spec))

    def test_transient_server_fault_rejected(self):
        spec = training_spec(persistences=["transient_read"])
        with pytest.raises(ConfigError):
            validate_cells(spec, enumerate_cells(spec))

    def test_repetition_seed(self):
        assert repetition_seed(0, 3, 1) == repetition_seed(0, 3, 1)
        assert len({repetition_seed(0, c, r) for c in range(5) for r in range(5)}) == 25


class TestTrainingSweep:
    def test_rows(self, bundled_maps):
        table = run_training_sweep(training_spec(), bundled_maps).table()
        assert list(table.columns) == TRAINING_CELL_COLUMNS + STAT_COLUMNS
        assert table["ber"].tolist() == [0.0, 0.5]
        assert table["mean_flips"].iloc[0] == 0
        assert table["mean_flips"].iloc[1] > 0
        assert (table["mean_rounds"] == 3).all()
        assert table["mean_sr"].between(0, 1).all()

    def test_identical_for_any_worker_count(self, bundled_maps, tmp_path):
        spec = training_spec()
        one = write_csv(run_training_sweep(spec, bundled_maps, workers=1).table(), tmp_path / "one.csv")
        two = write_csv(run_training_sweep(spec, bundled_maps, workers=2).table(), tmp_path / "two.csv")
        assert one.read_bytes() == two.read_bytes()

    def test_needs_training_phase(self):
        with pytest.raises(ConfigError):
            run_training_sweep(inference_spec(), open_maps(2))


class TestInferenceSweep:
    def test_rows(self, walker_bundle):
        table = run_inference_sweep(inference_spec(), walker_bundle).table()
        assert len(table) == 4
        clean = table[table["ber"] == 0.0]
        assert (clean["mean_sr"] == 1.0).all()
        assert (clean["mean_flips"] == 0).all()
        static = table[(table["ber"] == 1.0) & (table["persistence"] == "persistent_memory")]
        # Every bit of both agents' 13 parameters, once per repetition
        assert static["mean_flips"].iloc[0] == 2 * 13 * 8
        transient = table[(table["ber"] == 1.0) & (table["persistence"] == "transient_read")]
        # A fresh read on every attempt
        assert transient["mean_flips"].iloc[0] == 2 * 5 * 13 * 8

    def test_identical_for_any_worker_count(self, walker_bundle, tmp_path):
        spec = inference_spec(bers=[0.0, 0.05, 0.2])
        one = write_csv(run_inference_sweep(spec, walker_bundle, workers=1).table(), tmp_path / "one.csv")
        two = write_csv(run_inference_sweep(spec, walker_bundle, workers=2).table(), tmp_path / "two.csv")
        assert one.read_bytes() == two.read_bytes()

    def test_refuses_unconverged_bundle(self):
        idle = [MLPPolicy((4, 1, 4)), MLPPolicy((4, 1, 4))]
        bundle = PolicyBundle(idle, open_maps(2), TrainConfig(n_agents=2, max_steps=30, layer_dims=(4, 1, 4)))
        with pytest.raises(NotConvergedError):
            converged_or_raise(bundle, 0.96, attempts=5)
        with pytest.raises(NotConvergedError):
            run_inference_sweep(inference_spec(), bundle)

    def test_server_location_rejected(self, walker_bundle):
        with pytest.raises(FaultPlanError):
            run_inference_sweep(inference_spec(locations=["server_state"], persistences=["persistent_memory"]), walker_bundle)


class TestStudies:
    def test_convergence_after_fault(self, bundled_maps):
        spec = training_spec(bers=[0.5], required_sr=0.0, eval_every=2, repetitions=2)
        result = run_convergence_study(spec, bundled_maps)
        assert len(result.runs) == 2
        # First evaluation at or after the fault episode
        assert result.runs["episodes_to_recover"].tolist() == [1, 1]
        assert not result.runs["censored"].any()
        assert result.summary["censored"].iloc[0] == 0

    def test_mitigation_inference(self, walker_bundle):
        result = run_mitigation(inference_spec(bers=[1.0]), bundle=walker_bundle)
        table = result.sweep.table()
        assert sorted(table["guard"].unique().tolist()) == [False, True]
        assert result.clean_flags == 0
        assert clean_screen_flags(walker_bundle) == 0

    def test_mitigation_training(self, bundled_maps):
        spec = training_spec(bers=[0.5], detector={"consecutive": 2, "window": 3, "checkpoint_every": 1})
        result = run_mitigation(spec, bundled_maps, clean_runs=2)
        assert len(result.sweep.rows) == 2
        assert result.clean_runs == 2
        assert result.false_positives >= 0


class TestBundle:
    def test_save_load(self, walker_bundle, tmp_path):
        walker_bundle.save(tmp_path / "bundle")
        loaded = PolicyBundle.load(tmp_path / "bundle")
        assert len(loaded) == 2
        assert loaded.rounds == 3
        for a, b in zip(walker_bundle.policies, loaded.policies):
            assert flatten_params(a) == flatten_params(b)
        assert [m.render() for m in loaded.maps] == [m.render() for m in walker_bundle.maps]
        assert loaded.success_rate(5) == 1.0

    def test_tampered_snapshot_rejected(self, walker_bundle, tmp_path):
        walker_bundle.save(tmp_path / "bundle")
        path = tmp_path / "bundle" / "agent_01.ckpt"
        data = bytearray(path.read_bytes())
        data[-40] ^= 0x10
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointIntegrityError):
            PolicyBundle.load(tmp_path / "bundle")

    def test_subset(self, walker_bundle):
        policies, maps = walker_bundle.subset(1)
        assert len(policies) == len(maps) == 1
        with pytest.raises(ConfigError):
            walker_bundle.subset(3)


def synthetic_table() -> pd.DataFrame:
    rows = []
    for cell_id, (episode, ber) in enumerate([(e, b) for e in (100, 900) for b in (0.0, 1e-3, 1e-2)]):
        rows.append(
            {
                "cell_id": cell_id,
                "fault_episode": episode,
                "ber": ber,
                "location": "server_state",
                "mode": "both",
                "persistence": "persistent_memory",
                "fmt": "Q(1,2,5)",
                "n_agents": 12,
                "interval_multiplier": 1,
                "guard": False,
                "repetitions": 100,
                "mean_sr": 1.0 - ber * 40 - episode / 10000,
                "sr_std": 0.01,
                "ci_half_width": 0.02,
                "mean_flips": ber * 644 * 8 * 12,
                "mean_rounds": 300.0,
                "mean_consensus_std": 0.125,
            }
        )
    return pd.DataFrame(rows)


class TestReporting:
    def test_csv_round_trip(self, tmp_path):
        table = synthetic_table()
        pd.testing.assert_frame_equal(read_csv(write_csv(table, tmp_path / "t.csv")), table)

    def test_heatmap_covers_grid(self):
        table = synthetic_table()
        assert heatmap_groups(table) == [
            {
                "location": "server_state",
                "mode": "both",
                "persistence": "persistent_memory",
                "fmt": "Q(1,2,5)",
                "n_agents": 12,
                "interval_multiplier": 1,
                "guard": False,
            }
        ]
        z = np.asarray(heatmap_figure(table).data[0].z)
        assert z.shape == (2, 3)
        assert not np.isnan(z).any()

    def test_empty_table_rejected(self, tmp_path):
        with pytest.raises(ReportError):
            report(pd.DataFrame(), "csv", tmp_path / "x.csv")
        with pytest.raises(ReportError):
            report(synthetic_table(), "pdf", tmp_path / "x.pdf")

    def test_summary(self):
        text = ResultFormatter().format_summary(synthetic_table(), title="demo")
        assert text.startswith("# demo")
        assert "**baseline SR**" in text
        assert "delta_vs_baseline" in text


class TestSpecLoader:
    def test_load(self, tmp_path):
        path = tmp_path / "spec.toml"
        path.write_text(
            "\n".join(
                [
                    'name = "demo"',
                    "repetitions = 3",
                    "fault_episodes = [3]",
                    "bers = [1e-2]",
                    'locations = ["server_state", "agent_weights(*)"]',
                    "",
                    "[train]",
                    "n_agents = 2",
                    "episodes = 6",
                    'fmt = "Q(1,4,11)"',
                ]
            )
        )
        spec = load_experiment_spec(path)
        assert spec.name == "demo"
        assert spec.phase == Phase.TRAINING
        assert len(enumerate_cells(spec)) == 2
        assert spec.train.fmt.total_bits == 16

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_experiment_spec(tmp_path / "missing.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("name = ")
        with pytest.raises(ConfigError):
            load_experiment_spec(bad)
        invalid = tmp_path / "invalid.toml"
        invalid.write_text("repetitions = 0\n")
        with pytest.raises(ConfigError):
            load_experiment_spec(invalid)

    def test_interval_study_config(self):
        spec = load_experiment_spec(PROJECT_ROOT / "configs" / "interval_study.toml")
        cells = enumerate_cells(spec)
        assert sorted({c.interval_multiplier for c in cells}) == [1, 2, 3]
        assert spec.train.interval_change_episode == 1000
        validate_cells(spec, cells)

    def test_too_many_agents_for_bundled_maps(self):
        with pytest.raises(ConfigError) as exc:
            resolve_maps(13)
        assert exc.value.field == "n_agents"


class TestCli:
    def test_report_command(self, tmp_path, tmp_out):
        csv = write_csv(synthetic_table(), tmp_path / "cells.csv")
        assert main(["--out", str(tmp_out), "report", str(csv)]) == 0
        assert (tmp_out / "cells_summary.md").read_text().startswith("# cells")

    def test_config_error_exit_code(self, tmp_path, tmp_out, capsys):
        code = main(["--out", str(tmp_out), "sweep-train", str(tmp_path / "missing.toml")])
        assert code == ConfigError.exit_code
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["error"] == "config_error"

    def test_bad_worker_setting(self, tmp_path, tmp_out, capsys, monkeypatch):
        monkeypatch.setenv("FAULTLAB_WORKERS", "zero")
        get_settings.cache_clear()
        try:
            code = main(["--out", str(tmp_out), "report", str(tmp_path / "cells.csv")])
        finally:
            get_settings.cache_clear()
        assert code == ConfigError.exit_code
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["error"] == "config_error"
        assert "FAULTLAB_WORKERS" in error["message"]

    def test_sweep_infer_command(self, walker_bundle, tmp_path, tmp_out):
        walker_bundle.save(tmp_path / "bundle")
        config = tmp_path / "infer.toml"
        config.write_text(
            "\n".join(
                [
                    'name = "cli_infer"',
                    'phase = "inference"',
                    "repetitions = 1",
                    "attempts = 5",
                    "bers = [0.0]",
                    'locations = ["agent_weights(*)"]',
                    "",
                    "[train]",
                    "n_agents = 2",
                    "max_steps = 30",
                ]
            )
        )
        code = main(["--out", str(tmp_out), "sweep-infer", str(config), "--bundle", str(tmp_path / "bundle")])
        assert code == 0
        table = read_csv(tmp_out / "cli_infer_results.csv")
        assert table["mean_sr"].tolist() == [1.0]
        assert (tmp_out / "cli_infer_timings.csv").exists()
        assert (tmp_out / "cli_infer_summary.md").exists()
