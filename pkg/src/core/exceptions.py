"""
Custom Exceptions - Simulator-specific error classes.

This module defines a hierarchy of exceptions for clean error handling:
- Each exception has an error code and a process exit code
- Used by the CLI layer for consistent error reports
- Bad input files and configuration raise a typed subclass
- Caller contract violations inside the library (say an empty outcome
  list or an off-grid position) raise ValueError
- pydantic validators raise ValueError; build_model re-raises it as ConfigError
"""
from pathlib import Path
from typing import Optional


class FaultLabError(Exception):
    """
    Base exception for all simulator errors.

    Subclass this for specific error types.
    """
    exit_code: int = 1
    error_code: str = "internal_error"

    def __init__(self, message: str, details: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        """Convert to error report dict."""
        return {
            "error": self.error_code,
            "message": self.message,
            "details": self.details,
        }


class ConfigError(FaultLabError):
    """Raised when a training config or experiment spec is invalid."""
    exit_code = 2
    error_code = "config_error"

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message, details=f"field={field}" if field else None)
        self.field = field


class FormatError(FaultLabError):
    """Raised on invalid fixed-point formats, codes or bit indices."""
    exit_code = 2
    error_code = "format_error"


class MapParseError(FaultLabError):
    """Base class for maze file parse failures."""
    exit_code = 2
    error_code = "map_parse_error"


class MapDimensionError(MapParseError):
    """Raised when a map is not exactly 10 lines of 10 cells."""
    error_code = "map_dimension_error"


class IllegalCellError(MapParseError):
    """Raised when a map contains a character outside '.HGS'."""
    error_code = "map_illegal_cell"

    def __init__(self, char: str, row: int, col: int):
        super().__init__(
            message=f"Illegal cell character {char!r} at row {row}, col {col}",
            details=f"row={row} col={col}",
        )
        self.char = char


class SourceCountError(MapParseError):
    """Raised when a map has zero or several 'S' cells."""
    error_code = "map_source_count"

    def __init__(self, count: int):
        super().__init__(
            message=f"Map must contain exactly one source cell, found {count}",
            details=f"count={count}",
        )
        self.count = count


class GoalCountError(MapParseError):
    """Raised when a map has no 'G' cell."""
    error_code = "map_goal_count"

    def __init__(self):
        super().__init__("Map must contain at least one goal cell")


class PolicyShapeError(FaultLabError):
    """Raised on observation/parameter shape or length mismatches."""
    exit_code = 2
    error_code = "policy_shape_error"


class CorruptedValuesError(FaultLabError):
    """Raised when action values contain NaN (undetected fault corruption)."""
    error_code = "corrupted_values"

    def __init__(self, values):
        super().__init__(
            message="Action values contain NaN",
            details=f"values={list(values)}",
        )


class FaultPlanError(FaultLabError):
    """Raised when a fault plan references agents, episodes or hooks that do not exist."""
    exit_code = 2
    error_code = "fault_plan_error"


class CheckpointError(FaultLabError):
    """Raised when a checkpoint cannot be written or read."""
    error_code = "checkpoint_error"


class CheckpointIntegrityError(CheckpointError):
    """Raised when a checkpoint file fails its digest or header checks."""
    error_code = "checkpoint_integrity"


class NotConvergedError(FaultLabError):
    """Raised when an inference study is given a policy bundle below the SR bar."""
    exit_code = 3
    error_code = "not_converged"

    def __init__(self, success_rate: float, required: float):
        super().__init__(
            message=(
                f"Policy bundle success rate {success_rate:.3f} is below "
                f"the required {required:.2f}"
            ),
            details=f"sr={success_rate:.4f} required={required}",
        )
        self.success_rate = success_rate


class ReportError(FaultLabError):
    """Raised when report output cannot be produced."""
    error_code = "report_error"

    def __init__(self, message: str, path: Optional[Path] = None):
        super().__init__(message, details=f"path={path}" if path else None)
        self.path = path
