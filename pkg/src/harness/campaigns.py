"""
Fault-injection campaigns.

A campaign expands an ExperimentSpec into cells (the cartesian product of
its sweep axes) and runs every cell `repetitions` times. Repetition r of
a cell trains with seed seed_base + r; its fault and evaluation streams
come from SeedSequence([seed_base, cell_id, r]). Nothing depends on which
worker thread runs a repetition or in which order, so results are
identical for any worker count.
"""
import itertools
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.config import get_settings
from src.core.exceptions import ConfigError
from src.core.logging_config import get_logger
from src.faultinj import FaultPlan, HookContext, HookPoint, InjectionLog, apply_fault_plan
from src.fedtrain import TrainingResult, evaluate_success_rate, train_federated
from src.fxp import QFormat
from src.gridworld import GridMap, load_bundled_maps
from src.guard import TrainingGuard, build_range_detectors, guarded_value_table, screen
from src.harness.bundle import PolicyBundle, converged_or_raise, requantized
from src.harness.stats import RepetitionResult, ResultRow, column_order, rows_to_dataframe, summarize
from src.models import (
    DetectorConfig,
    ExperimentSpec,
    FaultLocation,
    FaultSpec,
    FlipMode,
    Persistence,
    Phase,
    TrainConfig,
    build_model,
)
from src.policy import MLPPolicy, consensus_std, flatten_params, load_params

logger = get_logger(__name__)

TRAINING_CELL_COLUMNS = [
    "cell_id",
    "fault_episode",
    "ber",
    "location",
    "mode",
    "persistence",
    "fmt",
    "n_agents",
    "interval_multiplier",
    "guard",
]
INFERENCE_CELL_COLUMNS = [
    "cell_id",
    "fault_step",
    "ber",
    "location",
    "mode",
    "persistence",
    "fmt",
    "n_agents",
    "guard",
]
CONVERGENCE_RUN_COLUMNS = ["rep", "episodes_to_recover", "censored", "rounds", "final_sr"]


@dataclass(frozen=True)
class SweepCell:
    """
    One point of the sweep grid.

    Attributes:
        timing: Fault episode (training) or fault step (inference)
    """
    cell_id: int
    phase: Phase
    timing: int
    ber: float
    location: FaultLocation
    mode: FlipMode
    persistence: Persistence
    fmt: QFormat
    n_agents: int
    interval_multiplier: int = 1
    guard: bool = False

    def fault_spec(self) -> FaultSpec:
        """
        The cell's fault as a validated FaultSpec.

        Raises:
            ConfigError: If the location and persistence do not combine
        """
        return build_model(
            FaultSpec,
            {
                "location": self.location,
                "ber": self.ber,
                "mode": self.mode,
                "timing": self.timing,
                "persistence": self.persistence,
            },
        )

    def coordinates(self) -> Dict[str, Any]:
        row = {
            "cell_id": self.cell_id,
            "fault_episode" if self.phase == Phase.TRAINING else "fault_step": self.timing,
            "ber": self.ber,
            "location": str(self.location),
            "mode": self.mode.value,
            "persistence": self.persistence.value,
            "fmt": str(self.fmt),
            "n_agents": self.n_agents,
        }
        if self.phase == Phase.TRAINING:
            row["interval_multiplier"] = self.interval_multiplier
        row["guard"] = self.guard
        return row


@dataclass
class SweepResult:
    """Rows of one campaign, in cell order."""
    name: str
    phase: Phase
    rows: List[ResultRow]

    @property
    def cell_columns(self) -> List[str]:
        return TRAINING_CELL_COLUMNS if self.phase == Phase.TRAINING else INFERENCE_CELL_COLUMNS

    def table(self) -> pd.DataFrame:
        """Deterministic columns only (no timings)."""
        return rows_to_dataframe(self.rows)[column_order(self.cell_columns)]

    def timings(self) -> pd.DataFrame:
        df = rows_to_dataframe(self.rows)
        return df[["cell_id", "repetitions", "runtime_s"]]


def enumerate_cells(spec: ExperimentSpec) -> List[SweepCell]:
    """Cartesian product of the spec's axes, numbered in a fixed order."""
    training = spec.phase == Phase.TRAINING
    timings = spec.fault_episodes if training else [spec.fault_step]
    multipliers = spec.interval_multipliers if training else [1]
    grid = itertools.product(
        timings,
        spec.bers,
        spec.locations,
        spec.modes,
        spec.persistences,
        spec.format_axis,
        spec.agent_count_axis,
        multipliers,
        spec.guard,
    )
    return [
        SweepCell(cell_id, spec.phase, timing, ber, location, mode, persistence, fmt, n, multiplier, guard)
        for cell_id, (timing, ber, location, mode, persistence, fmt, n, multiplier, guard) in enumerate(grid)
    ]


def validate_cells(spec: ExperimentSpec, cells: Sequence[SweepCell], episodes: Optional[int] = None) -> None:
    """
    Reject invalid cells before anything runs.

    Raises:
        ConfigError: If a cell's fault does not form a valid FaultSpec
        FaultPlanError: If a fault cannot be scheduled for its cell
    """
    episodes = episodes or spec.train.episodes
    for cell in cells:
        FaultPlan([cell.fault_spec()], cell.phase, cell.n_agents, episodes, spec.train.max_steps)


def repetition_seed(seed_base: int, cell_id: int, rep: int) -> int:
    """Integer seed of one (cell, repetition) fault/evaluation stream."""
    return int(np.random.SeedSequence([seed_base, cell_id, rep]).generate_state(1)[0])


def cell_train_config(spec: ExperimentSpec, cell: SweepCell, rep: int, **overrides) -> TrainConfig:
    """The spec's base TrainConfig with the cell's axes and the repetition seed applied."""
    data = spec.train.model_dump()
    data.update(
        n_agents=cell.n_agents,
        fmt=cell.fmt,
        interval_multiplier=cell.interval_multiplier,
        seed=spec.seed_base + rep,
    )
    data.update(overrides)
    return build_model(TrainConfig, data)


def resolve_maps(n_agents: int, maps: Optional[Sequence[GridMap]] = None) -> List[GridMap]:
    """Caller-supplied maps, or the configured/bundled ones."""
    if maps is None:
        return load_bundled_maps(n_agents, get_settings().maps_dir)
    if len(maps) < n_agents:
        raise ConfigError(f"{n_agents} agents need {n_agents} maps, got {len(maps)}", field="n_agents")
    return list(maps[:n_agents])


def _make_guard(spec: ExperimentSpec, config: TrainConfig, checkpoint_dir: Optional[Path] = None) -> TrainingGuard:
    return TrainingGuard(
        spec.detector or DetectorConfig(),
        config.n_agents,
        comm_interval=config.comm_interval,
        layer_dims=config.layer_dims,
        checkpoint_dir=checkpoint_dir,
    )


Job = Tuple[SweepCell, int]


def run_jobs(
    jobs: Sequence[Job],
    fn: Callable[[SweepCell, int], Any],
    workers: int = 1,
) -> Dict[Job, Any]:
    """
    Run fn(cell, rep) for every job, possibly in parallel.

    Returns:
        Results keyed by (cell, rep)
    """
    results: Dict[Job, Any] = {}
    if workers <= 1:
        for cell, rep in jobs:
            results[(cell, rep)] = fn(cell, rep)
        return results

    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="cell") as executor:
        futures = {executor.submit(fn, cell, rep): (cell, rep) for cell, rep in jobs}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results


def _collect(spec: ExperimentSpec, cells: Sequence[SweepCell], results: Dict[Job, RepetitionResult]) -> SweepResult:
    rows = []
    for cell in cells:
        reps = [results[(cell, rep)] for rep in range(spec.repetitions)]
        row = summarize(cell.coordinates(), reps)
        rows.append(row)
        logger.debug(f"Cell {cell.cell_id}: mean SR {row.mean_sr:.4f} +/- {row.ci_half_width:.4f}")
    return SweepResult(spec.name, spec.phase, rows)


def _mean_consensus_std(policies: Sequence[MLPPolicy]) -> float:
    return float(np.mean([consensus_std(p) for p in policies]))


# Training campaigns

def run_training_repetition(
    spec: ExperimentSpec,
    cell: SweepCell,
    rep: int,
    maps: Sequence[GridMap],
) -> RepetitionResult:
    """Train once with the cell's fault, then evaluate greedy SR."""
    started = time.perf_counter()
    config = cell_train_config(spec, cell, rep)
    plan = FaultPlan(
        [cell.fault_spec()],
        Phase.TRAINING,
        cell.n_agents,
        config.episodes,
        config.max_steps,
        seed=repetition_seed(spec.seed_base, cell.cell_id, rep),
    )
    guard = _make_guard(spec, config) if cell.guard else None
    result = train_federated(config, maps[: cell.n_agents], plan, guard=guard)
    rates = evaluate_success_rate(result.policies, result.maps, spec.attempts, max_steps=config.max_steps)
    return RepetitionResult(
        rep=rep,
        success_rate=float(rates.mean()),
        flips=len(result.injection_log),
        rounds=result.rounds,
        detections=guard.detections if guard is not None else 0,
        consensus_std=_mean_consensus_std(result.policies),
        runtime_s=time.perf_counter() - started,
    )


def run_training_sweep(
    spec: ExperimentSpec,
    maps: Optional[Sequence[GridMap]] = None,
    workers: int = 1,
) -> SweepResult:
    """
    Episode x BER (x location, mode, ...) training campaign.

    Args:
        spec: Validated experiment spec (phase training)
        maps: Maps to use (default: configured or bundled maps)
        workers: Worker threads over (cell, repetition) jobs

    Returns:
        SweepResult with one ResultRow per cell

    Raises:
        ConfigError: If the spec is not a training spec or a cell is invalid
        FaultPlanError: If a cell's fault cannot be scheduled
    """
    if spec.phase != Phase.TRAINING:
        raise ConfigError(f"run_training_sweep needs a training spec, got {spec.phase.value}", field="phase")
    cells = enumerate_cells(spec)
    validate_cells(spec, cells)
    maps = resolve_maps(max(spec.agent_count_axis), maps)

    logger.info(f"Training sweep '{spec.name}': {len(cells)} cells x {spec.repetitions} repetitions")
    jobs = [(cell, rep) for cell in cells for rep in range(spec.repetitions)]
    results = run_jobs(jobs, lambda cell, rep: run_training_repetition(spec, cell, rep, maps), workers)
    return _collect(spec, cells, results)


# Inference campaigns

@dataclass
class Deployment:
    """Clean policies of one (format, agent count) slice of a bundle."""
    policies: List[MLPPolicy]
    maps: List[GridMap]
    detectors: Optional[list] = None


def _deployments(spec: ExperimentSpec, bundle: PolicyBundle, cells: Sequence[SweepCell]) -> Dict[Tuple, Deployment]:
    deployments: Dict[Tuple, Deployment] = {}
    for cell in cells:
        key = (cell.fmt, cell.n_agents)
        if key in deployments:
            continue
        policies, maps = bundle.subset(cell.n_agents)
        policies = requantized(policies, cell.fmt)
        for p in policies:
            p.value_table()
        deployments[key] = Deployment(policies, list(maps), build_range_detectors(policies))
    return deployments


def run_inference_repetition(
    spec: ExperimentSpec,
    cell: SweepCell,
    rep: int,
    deployment: Deployment,
) -> RepetitionResult:
    """
    Evaluate the deployed policies once under the cell's fault.

    Persistent weight faults corrupt each agent's stored codes once before
    the first attempt (a static fault). Transient reads hit the step
    `fault_step` of every attempt with fresh bits.
    """
    started = time.perf_counter()
    fault = cell.fault_spec()
    n = cell.n_agents
    max_steps = spec.train.max_steps
    detectors = deployment.detectors if cell.guard else None
    log = InjectionLog()

    if fault.persistence == Persistence.PERSISTENT_MEMORY:
        plan = FaultPlan([fault], Phase.INFERENCE, n, max_steps=max_steps, seed=repetition_seed(spec.seed_base, cell.cell_id, rep))
        codes = {i: flatten_params(p) for i, p in enumerate(deployment.policies)}
        hit = apply_fault_plan(plan, HookPoint.PRE_EPISODE, HookContext(time=0, codes=codes))
        log.extend(hit.log)
        policies = list(deployment.policies)
        for agent_id in hit.log.flips_by_agent():
            corrupted = policies[agent_id].copy()
            load_params(corrupted, hit.codes[agent_id], keep_residual=False)
            policies[agent_id] = corrupted
        tables = [
            guarded_value_table(p, detectors[i]) if detectors is not None else p.value_table()
            for i, p in enumerate(policies)
        ]
        rates = evaluate_success_rate(policies, deployment.maps, spec.attempts, max_steps=max_steps, tables=tables)
    else:
        # One plan per agent so each agent's reads are keyed by its own attempts
        streams = np.random.SeedSequence([spec.seed_base, cell.cell_id, rep]).spawn(n)
        plans = [
            FaultPlan([fault], Phase.INFERENCE, n, max_steps=max_steps, seed=int(s.generate_state(1)[0]))
            for s in streams
        ]
        fmt = deployment.policies[0].fmt
        layer_dims = deployment.policies[0].layer_dims

        def read_fault(agent_id: int, attempt: int):
            context = HookContext(time=attempt, agents=[agent_id], layer_dims=layer_dims, fmt=fmt, attempt=attempt)
            return apply_fault_plan(plans[agent_id], HookPoint.INFERENCE_STEP, context).reads.get(agent_id)

        tables = None
        filters = None
        if detectors is not None:
            tables = [guarded_value_table(p, d) for p, d in zip(deployment.policies, detectors)]
            filters = [d.filter for d in detectors]
        rates = evaluate_success_rate(
            deployment.policies,
            deployment.maps,
            spec.attempts,
            read_fault=read_fault,
            max_steps=max_steps,
            tables=tables,
            weight_filters=filters,
            log=log,
        )

    return RepetitionResult(
        rep=rep,
        success_rate=float(rates.mean()),
        flips=len(log),
        runtime_s=time.perf_counter() - started,
    )


def _load_bundle(spec: ExperimentSpec, bundle: Optional[PolicyBundle]) -> PolicyBundle:
    if bundle is not None:
        return bundle
    if spec.bundle is None:
        raise ConfigError("Inference campaigns need a policy bundle", field="bundle")
    return PolicyBundle.load(Path(spec.bundle))


def run_inference_sweep(
    spec: ExperimentSpec,
    bundle: Optional[PolicyBundle] = None,
    workers: int = 1,
) -> SweepResult:
    """
    BER sweep over a trained bundle, with static (persistent) or
    transient-read weight/activation faults and an optional range guard.

    Raises:
        NotConvergedError: If the bundle's fault-free SR is below spec.required_sr
        ConfigError: If the spec is not an inference spec or a cell is invalid
        FaultPlanError: If a fault is not injectable at inference
    """
    if spec.phase != Phase.INFERENCE:
        raise ConfigError(f"run_inference_sweep needs an inference spec, got {spec.phase.value}", field="phase")
    bundle = _load_bundle(spec, bundle)
    sr = converged_or_raise(bundle, spec.required_sr, spec.attempts)

    cells = enumerate_cells(spec)
    validate_cells(spec, cells)
    deployments = _deployments(spec, bundle, cells)

    logger.info(
        f"Inference sweep '{spec.name}': {len(cells)} cells x {spec.repetitions} repetitions "
        f"(bundle SR {sr:.3f})"
    )
    jobs = [(cell, rep) for cell in cells for rep in range(spec.repetitions)]
    results = run_jobs(
        jobs,
        lambda cell, rep: run_inference_repetition(spec, cell, rep, deployments[(cell.fmt, cell.n_agents)]),
        workers,
    )
    return _collect(spec, cells, results)


def clean_screen_flags(bundle: PolicyBundle) -> int:
    """Flags raised by screening every clean policy against its own bounds (expected 0)."""
    detectors = build_range_detectors(bundle.policies)
    return int(sum(screen(p, d).sum() for p, d in zip(bundle.policies, detectors)))


# Convergence study

@dataclass
class ConvergenceResult:
    """
    Episodes needed to regain the required SR after a fault.

    Attributes:
        runs: One row per (cell, repetition)
        summary: One row per cell
    """
    name: str
    runs: pd.DataFrame
    summary: pd.DataFrame


def recovery_budget(spec: ExperimentSpec, fault_episode: int) -> int:
    """Extra episodes allowed after the fault (default: twice the remaining base episodes)."""
    if spec.recovery_budget is not None:
        return spec.recovery_budget
    return 2 * max(spec.train.episodes - fault_episode, 1)


def episodes_to_recover(result: TrainingResult, fault_episode: int, required_sr: float) -> Optional[int]:
    """First evaluation at or after the fault with SR >= required, minus the fault episode."""
    evals = result.eval_log[result.eval_log["episode"] >= fault_episode]
    hits = evals[evals["mean_sr"] >= required_sr]
    if hits.empty:
        return None
    return int(hits["episode"].iloc[0]) - fault_episode


def run_convergence_repetition(
    spec: ExperimentSpec,
    cell: SweepCell,
    rep: int,
    maps: Sequence[GridMap],
) -> Dict[str, Any]:
    budget = recovery_budget(spec, cell.timing)
    config = cell_train_config(
        spec,
        cell,
        rep,
        episodes=cell.timing + budget,
        eval_every=spec.eval_every,
        eval_attempts=spec.attempts,
    )
    plan = FaultPlan(
        [cell.fault_spec()],
        Phase.TRAINING,
        cell.n_agents,
        config.episodes,
        config.max_steps,
        seed=repetition_seed(spec.seed_base, cell.cell_id, rep),
    )
    guard = _make_guard(spec, config) if cell.guard else None

    def recovered(episode: int, mean_sr: float) -> bool:
        return episode >= cell.timing and mean_sr >= spec.required_sr

    result = train_federated(config, maps[: cell.n_agents], plan, guard=guard, stop_condition=recovered)
    episodes = episodes_to_recover(result, cell.timing, spec.required_sr)
    final_sr = float(result.eval_log["mean_sr"].iloc[-1]) if not result.eval_log.empty else float("nan")
    return {
        "rep": rep,
        "episodes_to_recover": budget if episodes is None else episodes,
        "censored": episodes is None,
        "rounds": result.rounds,
        "final_sr": final_sr,
    }


def run_convergence_study(
    spec: ExperimentSpec,
    maps: Optional[Sequence[GridMap]] = None,
    workers: int = 1,
) -> ConvergenceResult:
    """
    Episodes-to-recover after a fault, per cell (typically per BER).

    A run that exhausts its budget without reaching required_sr is
    recorded as censored at the budget.
    """
    if spec.phase != Phase.TRAINING:
        raise ConfigError("The convergence study needs a training spec", field="phase")
    cells = enumerate_cells(spec)
    longest = max(cell.timing + recovery_budget(spec, cell.timing) for cell in cells)
    validate_cells(spec, cells, episodes=longest)
    maps = resolve_maps(max(spec.agent_count_axis), maps)

    logger.info(f"Convergence study '{spec.name}': {len(cells)} cells x {spec.repetitions} repetitions")
    jobs = [(cell, rep) for cell in cells for rep in range(spec.repetitions)]
    results = run_jobs(jobs, lambda cell, rep: run_convergence_repetition(spec, cell, rep, maps), workers)

    run_rows, summary_rows = [], []
    for cell in cells:
        coords = cell.coordinates()
        reps = [results[(cell, rep)] for rep in range(spec.repetitions)]
        for r in reps:
            run_rows.append({**coords, **r})
        episodes = np.array([r["episodes_to_recover"] for r in reps], dtype=np.float64)
        censored = sum(r["censored"] for r in reps)
        summary_rows.append(
            {
                **coords,
                "repetitions": len(reps),
                "mean_episodes_to_recover": float(episodes.mean()),
                "median_episodes_to_recover": float(np.median(episodes)),
                "censored": int(censored),
                "mean_rounds": float(np.mean([r["rounds"] for r in reps])),
            }
        )
    run_columns = TRAINING_CELL_COLUMNS + CONVERGENCE_RUN_COLUMNS
    return ConvergenceResult(
        spec.name,
        pd.DataFrame(run_rows)[run_columns],
        pd.DataFrame(summary_rows),
    )


# Mitigation and overhead

@dataclass
class MitigationResult:
    """
    Guard on/off comparison.

    Attributes:
        sweep: Cells with guard in {False, True}
        false_positives: Detections over clean guarded training runs (training only)
        clean_runs: Number of clean runs behind false_positives
        clean_flags: Range-screen flags on the clean bundle (inference only)
    """
    name: str
    phase: Phase
    sweep: SweepResult
    false_positives: Optional[int] = None
    clean_runs: int = 0
    clean_flags: Optional[int] = None


def count_false_positives(
    spec: ExperimentSpec,
    maps: Sequence[GridMap],
    runs: int,
    workers: int = 1,
) -> int:
    """Detector verdicts over `runs` fault-free guarded training runs."""
    base = enumerate_cells(spec)[0]

    def clean_run(cell: SweepCell, rep: int) -> int:
        config = cell_train_config(spec, cell, rep)
        guard = _make_guard(spec, config)
        train_federated(config, maps[: cell.n_agents], guard=guard)
        return guard.detections

    results = run_jobs([(base, rep) for rep in range(runs)], clean_run, workers)
    return int(sum(results.values()))


def run_mitigation(
    spec: ExperimentSpec,
    maps: Optional[Sequence[GridMap]] = None,
    bundle: Optional[PolicyBundle] = None,
    workers: int = 1,
    clean_runs: Optional[int] = None,
) -> MitigationResult:
    """
    Run the spec's cells with the guard off and on.

    Training specs additionally count detector false positives over clean
    runs; inference specs report range-screen flags on the clean bundle.
    """
    guarded = spec.model_copy(update={"guard": [False, True], "detector": spec.detector or DetectorConfig()})
    if spec.phase == Phase.TRAINING:
        maps = resolve_maps(max(spec.agent_count_axis), maps)
        sweep = run_training_sweep(guarded, maps, workers)
        runs = clean_runs if clean_runs is not None else spec.repetitions
        false_positives = count_false_positives(guarded, maps, runs, workers)
        logger.info(f"Mitigation '{spec.name}': {false_positives} false positives over {runs} clean runs")
        return MitigationResult(spec.name, spec.phase, sweep, false_positives=false_positives, clean_runs=runs)

    bundle = _load_bundle(spec, bundle)
    sweep = run_inference_sweep(guarded, bundle, workers)
    flags = clean_screen_flags(bundle)
    return MitigationResult(spec.name, spec.phase, sweep, clean_flags=flags)


@dataclass(frozen=True)
class OverheadResult:
    unguarded_s: float
    guarded_s: float
    repetitions: int

    @property
    def overhead(self) -> float:
        """Relative extra wall-clock of guarded training."""
        return self.guarded_s / self.unguarded_s - 1.0


def run_overhead_study(
    config: TrainConfig,
    maps: Optional[Sequence[GridMap]] = None,
    detector: Optional[DetectorConfig] = None,
    repetitions: int = 3,
) -> OverheadResult:
    """
    Wall-clock of fault-free training with and without the guard.

    Runs alternate between the two variants; the fastest run of each is
    reported. Guarded runs write their checkpoints to a temporary directory.
    """
    maps = resolve_maps(config.n_agents, maps)
    detector = detector or DetectorConfig()
    best = {False: float("inf"), True: float("inf")}
    for _ in range(repetitions):
        for guarded in (False, True):
            with tempfile.TemporaryDirectory(prefix="faultlab-ckpt-") as tmp:
                guard = (
                    TrainingGuard(detector, config.n_agents, config.comm_interval, config.layer_dims, Path(tmp))
                    if guarded
                    else None
                )
                started = time.perf_counter()
                train_federated(config, maps, guard=guard)
                best[guarded] = min(best[guarded], time.perf_counter() - started)

    result = OverheadResult(best[False], best[True], repetitions)
    logger.info(
        f"Guard overhead: {result.overhead:+.2%} "
        f"(unguarded {result.unguarded_s:.2f}s, guarded {result.guarded_s:.2f}s)"
    )
    return result
