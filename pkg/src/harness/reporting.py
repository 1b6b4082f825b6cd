"""
Campaign reports: CSV tables, SVG heatmaps and markdown summaries.

CSV files keep the table's column order and pandas' shortest round-trip
float repr, so two runs of the same campaign produce byte-identical files
and re-reading a file gives back the same table.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from src.core.exceptions import ReportError
from src.core.logging_config import get_logger
from src.fxp import bit_histogram
from src.harness.campaigns import TRAINING_CELL_COLUMNS
from src.policy import MLPPolicy, flatten_params

logger = get_logger(__name__)

REPORT_KINDS = ("csv", "heatmap-svg", "summary")

# Columns that index a heatmap cell rather than select a heatmap
_HEATMAP_AXES = ("cell_id", "fault_episode", "ber")


def _require_rows(table: pd.DataFrame) -> None:
    if table is None or table.empty:
        raise ReportError("Cannot report an empty result table")


def write_csv(table: pd.DataFrame, path: Path) -> Path:
    """
    Write a table in its current column order.

    Raises:
        ReportError: On I/O failure, with the path
    """
    _require_rows(table)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise ReportError(f"Failed to write CSV: {e}", path=path) from e
    logger.info(f"Wrote {len(table)} rows to {path}")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    """
    Read a table written by write_csv.

    Raises:
        ReportError: If the file cannot be read or parsed
    """
    path = Path(path)
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReportError(f"Failed to read CSV: {e}", path=path) from e


def _ber_label(ber: float) -> str:
    return "0" if ber == 0 else f"{ber:.0e}"


def heatmap_groups(table: pd.DataFrame) -> List[Dict[str, Any]]:
    """Distinct settings of the non-grid columns; one heatmap each."""
    _require_rows(table)
    if "fault_episode" not in table.columns:
        raise ReportError("Heatmaps need a training table with a fault_episode column")
    keys = [c for c in TRAINING_CELL_COLUMNS if c in table.columns and c not in _HEATMAP_AXES]
    if not keys:
        return [{}]
    return table[keys].drop_duplicates().to_dict("records")


def heatmap_figure(table: pd.DataFrame, group: Optional[Dict[str, Any]] = None, title: str = "") -> go.Figure:
    """
    Fault episode x BER heatmap of mean SR for one group of cells.

    Every (episode, BER) pair of the group is one heatmap cell; pairs
    without a result stay empty.
    """
    _require_rows(table)
    subset = table
    for column, value in (group or {}).items():
        subset = subset[subset[column] == value]
    if subset.empty:
        raise ReportError(f"No rows for heatmap group {group}")

    episodes = sorted(subset["fault_episode"].unique())
    bers = sorted(subset["ber"].unique())
    grid = subset.pivot_table(index="fault_episode", columns="ber", values="mean_sr", aggfunc="mean")
    grid = grid.reindex(index=episodes, columns=bers)

    fig = go.Figure(
        go.Heatmap(
            z=grid.to_numpy(),
            x=[_ber_label(b) for b in bers],
            y=[str(e) for e in episodes],
            zmin=0.0,
            zmax=1.0,
            colorscale="Viridis",
            colorbar={"title": "SR"},
            texttemplate="%{z:.2f}",
        )
    )
    fig.update_layout(
        title=title,
        xaxis_title="Bit error rate",
        yaxis_title="Fault episode",
        template="plotly_white",
        width=640,
        height=480,
    )
    return fig


def _group_slug(group: Dict[str, Any]) -> str:
    if not group:
        return "all"
    parts = [f"{k}-{v}" for k, v in group.items()]
    return "_".join(parts).replace("(", "").replace(")", "").replace("*", "all").replace(",", "-").replace(" ", "")


def write_figure(fig: go.Figure, path: Path) -> Path:
    """
    Export a figure as SVG (static export via kaleido).

    Raises:
        ReportError: If the export fails, with the path
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.write_image(str(path), format="svg")
    except (OSError, ValueError, RuntimeError) as e:
        raise ReportError(f"Failed to export figure: {e}", path=path) from e
    logger.info(f"Wrote figure {path}")
    return path


def write_heatmaps(table: pd.DataFrame, directory: Path, prefix: str = "heatmap") -> List[Path]:
    """
    Write one SVG heatmap per group of cells.

    Raises:
        ReportError: If a figure cannot be exported, with its path
    """
    directory = Path(directory)
    paths = []
    for group in heatmap_groups(table):
        title = ", ".join(f"{k}={v}" for k, v in group.items())
        fig = heatmap_figure(table, group, title=title)
        paths.append(write_figure(fig, directory / f"{prefix}_{_group_slug(group)}.svg"))
    return paths


class ResultFormatter:
    """
    Formats campaign tables as markdown.

    Example:
        >>> formatter = ResultFormatter()
        >>> print(formatter.format_summary(sweep.table(), baseline_sr=0.97))
    """

    def __init__(self, max_rows: int = 50, max_col_width: int = 40):
        self.max_rows = max_rows
        self.max_col_width = max_col_width

    def format_as_table(self, table: pd.DataFrame) -> str:
        """Markdown table of the first max_rows rows."""
        if table.empty:
            return "_No data to display_"

        headers = list(table.columns)
        header_row = "| " + " | ".join(headers) + " |"
        separator = "|" + "|".join(["---" for _ in headers]) + "|"
        rows = [
            "| " + " | ".join(self._format_value(row[h]) for h in headers) + " |"
            for row in table.head(self.max_rows).to_dict("records")
        ]

        text = "\n".join([header_row, separator] + rows)
        if len(table) > self.max_rows:
            text += f"\n\n_Showing {self.max_rows} of {len(table)} rows_"
        return text

    def format_summary(
        self,
        table: pd.DataFrame,
        title: str = "Campaign summary",
        baseline_sr: Optional[float] = None,
    ) -> str:
        """
        Summary with per-cell deltas against a fault-free baseline.

        Args:
            table: ResultRow table (mean_sr and ci_half_width required)
            title: Heading
            baseline_sr: Fault-free SR; defaults to the mean SR of BER-0 cells when present

        Returns:
            Markdown text
        """
        _require_rows(table)
        if baseline_sr is None and "ber" in table.columns and (table["ber"] == 0).any():
            baseline_sr = float(table.loc[table["ber"] == 0, "mean_sr"].mean())

        lines = [f"# {title}", ""]
        lines.append(f"**cells**: {len(table)} | **repetitions per cell**: {int(table['repetitions'].iloc[0])}")
        best = table.loc[table["mean_sr"].idxmax()]
        worst = table.loc[table["mean_sr"].idxmin()]
        lines.append(f"**best cell**: {int(best['cell_id'])} (SR {best['mean_sr']:.3f})")
        lines.append(f"**worst cell**: {int(worst['cell_id'])} (SR {worst['mean_sr']:.3f})")

        shown = table.drop(columns=[c for c in ("sr_std", "runtime_s") if c in table.columns])
        if baseline_sr is not None:
            lines.append(f"**baseline SR**: {baseline_sr:.3f}")
            shown = shown.assign(delta_vs_baseline=shown["mean_sr"] - baseline_sr)
            below = table["mean_sr"] + table["ci_half_width"] < baseline_sr
            lines.append(f"**cells significantly below baseline**: {int(below.sum())} of {len(table)}")

        lines += ["", self.format_as_table(shown), ""]
        return "\n".join(lines)

    def _format_value(self, value: Any) -> str:
        """Format a single value for display."""
        if value is None or (isinstance(value, float) and np.isnan(value)):
            return "_null_"
        if isinstance(value, (bool, np.bool_)):
            return "yes" if value else "no"
        if isinstance(value, (float, np.floating)):
            if value != 0 and abs(value) < 1e-3:
                return f"{value:.0e}"
            if value == int(value):
                return str(int(value))
            return f"{value:.4f}"

        str_value = str(value)
        if len(str_value) > self.max_col_width:
            return str_value[: self.max_col_width - 3] + "..."
        return str_value.replace("|", "\\|")


def write_summary(text: str, path: Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ReportError(f"Failed to write summary: {e}", path=path) from e
    logger.info(f"Wrote summary {path}")
    return path


def report(table: pd.DataFrame, kind: str, path: Path, **kwargs) -> List[Path]:
    """
    Write one report artifact.

    Args:
        table: Nonempty result table
        kind: "csv", "heatmap-svg" (path is a directory) or "summary"
        path: Output file or directory

    Raises:
        ReportError: On an empty table, an unknown kind or an I/O failure
    """
    _require_rows(table)
    if kind == "csv":
        return [write_csv(table, path)]
    if kind == "heatmap-svg":
        return write_heatmaps(table, path, **kwargs)
    if kind == "summary":
        return [write_summary(ResultFormatter().format_summary(table, **kwargs), path)]
    raise ReportError(f"Unknown report kind '{kind}', expected one of {', '.join(REPORT_KINDS)}")


def bit_histogram_table(policies: Sequence[MLPPolicy]) -> pd.DataFrame:
    """
    Fraction of 1-bits per bit position of each agent's stored codes.

    Columns: agent, then bit0 (LSB) .. bit{B-1} (sign), then zero_fraction.
    """
    if not policies:
        raise ReportError("No policies to histogram")
    rows = []
    for agent_id, policy in enumerate(policies):
        ones = bit_histogram(flatten_params(policy))
        row = {"agent": agent_id}
        row.update({f"bit{b}": float(v) for b, v in enumerate(ones)})
        row["zero_fraction"] = float(1.0 - ones.mean())
        rows.append(row)
    return pd.DataFrame(rows)


def bit_histogram_figure(table: pd.DataFrame) -> go.Figure:
    """Bar chart of the mean 1-bit fraction per bit position."""
    bits = [c for c in table.columns if c.startswith("bit")]
    fig = go.Figure(go.Bar(x=bits, y=table[bits].mean().to_numpy(), marker_color="#2a788e"))
    fig.update_layout(
        title=f"Stored-code bits (zero fraction {table['zero_fraction'].mean():.2%})",
        xaxis_title="Bit position (bit0 = LSB)",
        yaxis_title="Fraction of 1-bits",
        yaxis_range=[0, 1],
        template="plotly_white",
    )
    return fig
