"""
Campaign-scale acceptance checks.

These train full 12-agent systems and take minutes; run them with
`pytest --runslow`.
"""
import pytest

from src.fedtrain import train_federated
from src.fxp import QFormat
from src.harness import PolicyBundle, run_convergence_study, run_inference_sweep, run_mitigation
from src.harness.stats import ci_separated, monotone_non_increasing
from src.models import ExperimentSpec, TrainConfig, build_model
from src.policy import consensus_std

pytestmark = pytest.mark.slow

REQUIRED_SR = 0.96


@pytest.fixture(scope="session")
def converged_bundle(bundled_maps) -> PolicyBundle:
    result = train_federated(TrainConfig(seed=0), bundled_maps)
    return PolicyBundle.from_training(result, name="baseline")


def inference_spec(**overrides) -> ExperimentSpec:
    data = {
        "name": "acceptance_infer",
        "phase": "inference",
        "bers": [0.0, 1e-3, 1e-2],
        "locations": ["agent_weights(*)"],
        "repetitions": 30,
        "attempts": 1000,
    }
    data.update(overrides)
    return build_model(ExperimentSpec, data)


def test_baseline_converges(converged_bundle):
    assert converged_bundle.success_rate(1000) >= REQUIRED_SR


def test_requantization_keeps_performance(converged_bundle):
    wide = PolicyBundle(
        [p.requantize(QFormat(4, 11)) for p in converged_bundle.policies],
        converged_bundle.maps,
        converged_bundle.config,
    )
    assert abs(wide.success_rate(1000) - converged_bundle.success_rate(1000)) < 0.01


def test_transient_reads_negligible(converged_bundle):
    table = run_inference_sweep(inference_spec(persistences=["transient_read"]), converged_bundle).table()
    clean = table[table["ber"] == 0.0].iloc[0]
    for _, row in table[table["ber"] > 0].iterrows():
        assert abs(row["mean_sr"] - clean["mean_sr"]) <= row["ci_half_width"] + clean["ci_half_width"]


def test_static_faults_hurt(converged_bundle):
    table = run_inference_sweep(inference_spec(), converged_bundle).table()
    clean = table[table["ber"] == 0.0].iloc[0]
    heavy = table[table["ber"] == 1e-2].iloc[0]
    assert ci_separated(heavy, clean)
    assert monotone_non_increasing(table["mean_sr"].tolist(), tolerance=0.02)


def test_range_guard_mitigates(converged_bundle):
    result = run_mitigation(inference_spec(bers=[1e-3, 1e-2]), bundle=converged_bundle)
    table = result.sweep.table()
    assert result.clean_flags == 0
    for ber in (1e-3, 1e-2):
        cells = table[table["ber"] == ber].set_index("guard")["mean_sr"]
        assert cells[True] >= cells[False]
        assert cells[True] >= 2 * cells[False] or cells[False] >= REQUIRED_SR


def test_recovery_after_server_fault(bundled_maps):
    spec = build_model(
        ExperimentSpec,
        {
            "name": "acceptance_convergence",
            "fault_episodes": [900],
            "bers": [1e-2],
            "locations": ["server_state"],
            "repetitions": 3,
            "attempts": 200,
            "eval_every": 50,
        },
    )
    result = run_convergence_study(spec, bundled_maps, workers=3)
    assert (~result.runs["censored"]).sum() >= 2


def test_training_guard_has_no_false_positives(bundled_maps):
    spec = build_model(
        ExperimentSpec,
        {
            "name": "acceptance_mitigation",
            "fault_episodes": [900],
            "bers": [1e-2],
            "locations": ["server_state"],
            "repetitions": 1,
            "detector": {"drop_percent": 25, "consecutive": 50, "window": 100, "checkpoint_every": 5},
        },
    )
    result = run_mitigation(spec, bundled_maps, workers=2, clean_runs=3)
    assert result.false_positives == 0
    guarded = result.sweep.table().set_index("guard")["mean_sr"]
    assert guarded[True] >= REQUIRED_SR


def test_consensus_spread_grows_with_agent_count(bundled_maps):
    spreads = []
    for n in (1, 4, 8, 12):
        result = train_federated(TrainConfig(n_agents=n, seed=0), bundled_maps[:n])
        spreads.append(sum(consensus_std(p) for p in result.policies) / n)
    assert spreads == sorted(spreads)
