"""
Campaign statistics: per-cell aggregation of repetition results.

Success-rate confidence intervals use the normal approximation of the
binomial at 95%: half-width = z * sqrt(p (1 - p) / R).
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

Z_95 = float(norm.ppf(0.975))

# Columns that do not depend on scheduling or timing; only these are
# written to the results CSV.
STAT_COLUMNS = [
    "repetitions",
    "mean_sr",
    "sr_std",
    "ci_half_width",
    "mean_flips",
    "mean_rounds",
    "mean_consensus_std",
]
TIMING_COLUMNS = ["runtime_s"]


def ci_half_width(p: float, repetitions: int, z: float = Z_95) -> float:
    """
    95% half-width of a success rate estimated from `repetitions` trials.

    Example:
        >>> round(ci_half_width(0.96, 1000), 4)
        0.0121
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    p = min(max(p, 0.0), 1.0)
    return z * float(np.sqrt(p * (1.0 - p) / repetitions))


@dataclass(frozen=True)
class RepetitionResult:
    """Outcome of one repetition of one cell."""
    rep: int
    success_rate: float
    flips: int = 0
    rounds: int = 0
    detections: int = 0
    consensus_std: float = 0.0
    runtime_s: float = 0.0


@dataclass
class ResultRow:
    """
    Aggregated statistics of one sweep cell.

    Attributes:
        cell: Cell coordinates (column -> value), in column order
        mean_sr: Mean system SR over repetitions
        sr_std: Population std of the per-repetition SR
        ci_half_width: 95% CI half-width of mean_sr
        mean_flips: Mean number of flips performed per repetition
        mean_rounds: Mean aggregation rounds (communication cost)
        mean_consensus_std: Mean softmax spread of the final policies
        runtime_s: Total wall-clock of the cell's repetitions
    """
    cell: Dict[str, Any]
    repetitions: int
    mean_sr: float
    sr_std: float
    ci_half_width: float
    mean_flips: float
    mean_rounds: float
    mean_consensus_std: float = 0.0
    runtime_s: float = 0.0

    def as_dict(self) -> Dict[str, Any]:
        row = dict(self.cell)
        row.update(
            repetitions=self.repetitions,
            mean_sr=self.mean_sr,
            sr_std=self.sr_std,
            ci_half_width=self.ci_half_width,
            mean_flips=self.mean_flips,
            mean_rounds=self.mean_rounds,
            mean_consensus_std=self.mean_consensus_std,
        )
        row["runtime_s"] = self.runtime_s
        return row


def summarize(cell: Dict[str, Any], results: Sequence[RepetitionResult]) -> ResultRow:
    """
    Aggregate the repetitions of one cell.

    Results are ordered by repetition index first, so the statistics do
    not depend on the order repetitions finished in.

    Raises:
        ValueError: If there are no results
    """
    if not results:
        raise ValueError(f"No repetitions to summarize for cell {cell}")
    ordered = sorted(results, key=lambda r: r.rep)
    rates = np.array([r.success_rate for r in ordered], dtype=np.float64)
    mean_sr = float(rates.mean())
    return ResultRow(
        cell=dict(cell),
        repetitions=len(ordered),
        mean_sr=mean_sr,
        sr_std=float(rates.std()),
        ci_half_width=ci_half_width(mean_sr, len(ordered)),
        mean_flips=float(np.mean([r.flips for r in ordered])),
        mean_rounds=float(np.mean([r.rounds for r in ordered])),
        mean_consensus_std=float(np.mean([r.consensus_std for r in ordered])),
        runtime_s=float(sum(r.runtime_s for r in ordered)),
    )


def rows_to_dataframe(rows: Sequence[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([r.as_dict() for r in rows])


def ci_separated(low: pd.Series, high: pd.Series) -> bool:
    """True when high.mean_sr - low.mean_sr exceeds the summed half-widths."""
    return float(high["mean_sr"] - low["mean_sr"]) > float(high["ci_half_width"] + low["ci_half_width"])


def monotone_non_increasing(values: Sequence[float], tolerance: float = 0.0) -> bool:
    """Trend check allowing each step to rise by at most `tolerance`."""
    values = list(values)
    return all(b <= a + tolerance for a, b in zip(values, values[1:]))


def column_order(cell_columns: List[str]) -> List[str]:
    return list(cell_columns) + STAT_COLUMNS
