"""
Command-line entry point.

Run with: python -m src.harness <command> CONFIG [options]

Commands:
    train        train one federated run and save a policy bundle
    sweep-train  training-phase fault campaign (CSV, heatmaps, summary)
    sweep-infer  inference-phase fault campaign over a bundle
    convergence  episodes-to-recover after a late fault
    mitigate     guard on/off comparison
    overhead     wall-clock cost of the training guard
    report       re-render reports from a results CSV

Exit status is 0 only when every cell completed; simulator errors exit
with their error's exit code and print its JSON report on stderr.
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from src.core.config import get_settings
from src.core.exceptions import ConfigError, FaultLabError
from src.core.logging_config import get_logger, setup_logging
from src.fedtrain import train_federated
from src.guard import TrainingGuard
from src.harness.bundle import PolicyBundle
from src.harness.campaigns import (
    SweepResult,
    resolve_maps,
    run_convergence_study,
    run_inference_sweep,
    run_mitigation,
    run_overhead_study,
    run_training_sweep,
)
from src.harness.reporting import (
    REPORT_KINDS,
    ResultFormatter,
    bit_histogram_figure,
    bit_histogram_table,
    read_csv,
    report,
    write_csv,
    write_figure,
    write_heatmaps,
    write_summary,
)
from src.harness.spec_loader import load_experiment_spec
from src.models import DetectorConfig, Phase

logger = get_logger(__name__)


def resolve_workers(cli_value: Optional[int]) -> int:
    """Worker threads: CLI flag, then FAULTLAB_WORKERS, then 1."""
    if cli_value is not None:
        if cli_value < 1:
            raise argparse.ArgumentTypeError(f"--workers must be >= 1, got {cli_value}")
        return cli_value
    return get_settings().workers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faultlab", description="Bit-flip fault campaigns for federated RL on GridWorld")
    parser.add_argument("--workers", type=int, default=None, help="worker threads (default: FAULTLAB_WORKERS or 1)")
    parser.add_argument("--log-level", default=None, help="console log level (default: LOG_LEVEL)")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: FAULTLAB_OUTPUT_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one run and save a policy bundle")
    train.add_argument("config", type=Path)
    train.add_argument("--guard", action="store_true", help="enable reward-drop detection and checkpoints")

    for name in ("sweep-train", "convergence"):
        p = sub.add_parser(name)
        p.add_argument("config", type=Path)
        if name == "sweep-train":
            p.add_argument("--no-heatmaps", action="store_true")

    infer = sub.add_parser("sweep-infer")
    infer.add_argument("config", type=Path)
    infer.add_argument("--bundle", type=Path, default=None, help="bundle directory (overrides the spec)")

    mitigate = sub.add_parser("mitigate")
    mitigate.add_argument("config", type=Path)
    mitigate.add_argument("--bundle", type=Path, default=None)
    mitigate.add_argument("--clean-runs", type=int, default=None, help="fault-free runs for false positives")

    overhead = sub.add_parser("overhead")
    overhead.add_argument("config", type=Path)
    overhead.add_argument("--repetitions", type=int, default=3)

    rep = sub.add_parser("report", help="render reports from a results CSV")
    rep.add_argument("csv", type=Path)
    rep.add_argument("--kind", choices=REPORT_KINDS, default="summary")
    rep.add_argument("--baseline-sr", type=float, default=None)
    return parser


def _write_sweep(sweep: SweepResult, out: Path, heatmaps: bool = True, baseline_sr: Optional[float] = None) -> None:
    table = sweep.table()
    write_csv(table, out / f"{sweep.name}_results.csv")
    write_csv(sweep.timings(), out / f"{sweep.name}_timings.csv")
    if heatmaps and sweep.phase == Phase.TRAINING:
        write_heatmaps(table, out, prefix=f"{sweep.name}_heatmap")
    summary = ResultFormatter().format_summary(table, title=sweep.name, baseline_sr=baseline_sr)
    write_summary(summary, out / f"{sweep.name}_summary.md")


def cmd_train(args, out: Path, workers: int) -> int:
    spec = load_experiment_spec(args.config)
    config = spec.train
    maps = resolve_maps(config.n_agents)
    guard = None
    if args.guard:
        guard = TrainingGuard(
            spec.detector or DetectorConfig(),
            config.n_agents,
            config.comm_interval,
            config.layer_dims,
            checkpoint_dir=out / f"{spec.name}_checkpoints",
        )
    result = train_federated(config, maps, guard=guard, workers=workers)
    result.save_logs(out, prefix=f"{spec.name}_")

    bundle = PolicyBundle.from_training(result, name=spec.name)
    sr = bundle.success_rate(config.eval_attempts)
    bundle.save(out / f"{spec.name}_bundle")

    bits = bit_histogram_table(result.policies)
    write_csv(bits, out / f"{spec.name}_bits.csv")
    write_figure(bit_histogram_figure(bits), out / f"{spec.name}_bits.svg")
    logger.info(f"Trained '{spec.name}': greedy SR {sr:.3f}, {result.rounds} rounds, {result.wall_clock_s:.1f}s")
    return 0


def cmd_sweep_train(args, out: Path, workers: int) -> int:
    sweep = run_training_sweep(load_experiment_spec(args.config), workers=workers)
    _write_sweep(sweep, out, heatmaps=not args.no_heatmaps)
    return 0


def cmd_sweep_infer(args, out: Path, workers: int) -> int:
    spec = load_experiment_spec(args.config)
    bundle = PolicyBundle.load(args.bundle) if args.bundle is not None else None
    sweep = run_inference_sweep(spec, bundle, workers=workers)
    _write_sweep(sweep, out, heatmaps=False)
    return 0


def cmd_convergence(args, out: Path, workers: int) -> int:
    result = run_convergence_study(load_experiment_spec(args.config), workers=workers)
    write_csv(result.runs, out / f"{result.name}_convergence_runs.csv")
    write_csv(result.summary, out / f"{result.name}_convergence.csv")
    return 0


def cmd_mitigate(args, out: Path, workers: int) -> int:
    spec = load_experiment_spec(args.config)
    bundle = PolicyBundle.load(args.bundle) if args.bundle is not None else None
    result = run_mitigation(spec, bundle=bundle, workers=workers, clean_runs=args.clean_runs)
    _write_sweep(result.sweep, out, heatmaps=False)
    facts = {"name": result.name, "phase": result.phase.value}
    if result.false_positives is not None:
        facts.update(false_positives=result.false_positives, clean_runs=result.clean_runs)
    if result.clean_flags is not None:
        facts["clean_flags"] = result.clean_flags
    (out / f"{result.name}_mitigation.json").write_text(json.dumps(facts, indent=2), encoding="utf-8")
    return 0


def cmd_overhead(args, out: Path, workers: int) -> int:
    spec = load_experiment_spec(args.config)
    result = run_overhead_study(spec.train, detector=spec.detector, repetitions=args.repetitions)
    facts = {
        "unguarded_s": result.unguarded_s,
        "guarded_s": result.guarded_s,
        "overhead": result.overhead,
        "repetitions": result.repetitions,
    }
    (out / f"{spec.name}_overhead.json").write_text(json.dumps(facts, indent=2), encoding="utf-8")
    return 0


def cmd_report(args, out: Path, workers: int) -> int:
    table = read_csv(args.csv)
    stem = args.csv.stem
    if args.kind == "csv":
        report(table, "csv", out / f"{stem}.csv")
    elif args.kind == "heatmap-svg":
        report(table, "heatmap-svg", out, prefix=f"{stem}_heatmap")
    else:
        report(table, "summary", out / f"{stem}_summary.md", title=stem, baseline_sr=args.baseline_sr)
    return 0


COMMANDS = {
    "train": cmd_train,
    "sweep-train": cmd_sweep_train,
    "sweep-infer": cmd_sweep_infer,
    "convergence": cmd_convergence,
    "mitigate": cmd_mitigate,
    "overhead": cmd_overhead,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = get_settings()
    except ConfigError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code
    setup_logging(args.log_level or settings.log_level, settings.log_dir)

    try:
        workers = resolve_workers(args.workers)
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))

    out = args.out or settings.output_dir
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"{settings.app_name}: {args.command} (workers={workers}, out={out})")

    try:
        return COMMANDS[args.command](args, out, workers)
    except FaultLabError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return e.exit_code
