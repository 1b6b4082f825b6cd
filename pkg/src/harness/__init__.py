"""
Harness module - campaigns, statistics, bundles, reports and the CLI.

- spec_loader.py : TOML experiment specs
- campaigns.py   : training/inference sweeps, convergence, mitigation, overhead
- stats.py       : ResultRow and confidence intervals
- bundle.py      : PolicyBundle directories
- reporting.py   : CSV, SVG heatmaps, markdown summaries, bit histograms
- cli.py         : argparse entry point (python -m src.harness)
"""
from src.harness.bundle import PolicyBundle, converged_or_raise, requantized
from src.harness.campaigns import (
    ConvergenceResult,
    MitigationResult,
    OverheadResult,
    SweepCell,
    SweepResult,
    enumerate_cells,
    repetition_seed,
    run_convergence_study,
    run_inference_sweep,
    run_mitigation,
    run_overhead_study,
    run_training_sweep,
    validate_cells,
)
from src.harness.reporting import ResultFormatter, report
from src.harness.spec_loader import load_experiment_spec
from src.harness.stats import RepetitionResult, ResultRow, ci_half_width, summarize

__all__ = [
    "PolicyBundle",
    "converged_or_raise",
    "requantized",
    "ConvergenceResult",
    "MitigationResult",
    "OverheadResult",
    "SweepCell",
    "SweepResult",
    "enumerate_cells",
    "repetition_seed",
    "run_convergence_study",
    "run_inference_sweep",
    "run_mitigation",
    "run_overhead_study",
    "run_training_sweep",
    "validate_cells",
    "ResultFormatter",
    "report",
    "load_experiment_spec",
    "RepetitionResult",
    "ResultRow",
    "ci_half_width",
    "summarize",
]
