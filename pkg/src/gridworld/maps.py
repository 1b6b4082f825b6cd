"""
Maze maps - loading and validating 10x10 GridWorld layouts.

Map file format: 10 lines of 10 characters,
'.' = Free, 'H' = Hell, 'G' = Goal, 'S' = Source; trailing newline optional.

Twelve layouts ship with the package under assets/maps and are the default
environments for federated runs (agent i trains on map i).
"""
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.core.exceptions import (
    ConfigError,
    GoalCountError,
    IllegalCellError,
    MapDimensionError,
    SourceCountError,
)
from src.core.logging_config import get_logger

logger = get_logger(__name__)

GRID_SIZE = 10
BUNDLED_MAPS_DIR = Path(__file__).parent / "assets" / "maps"
BUNDLED_MAP_COUNT = 12

Position = Tuple[int, int]


class CellType(IntEnum):
    """Cell semantics; the Source is free for occupancy after the start."""
    FREE = 0
    HELL = 1
    GOAL = 2
    SOURCE = 3


_CHAR_TO_CELL = {
    ".": CellType.FREE,
    "H": CellType.HELL,
    "G": CellType.GOAL,
    "S": CellType.SOURCE,
}


@dataclass(frozen=True, eq=False)
class GridMap:
    """
    An immutable 10x10 maze.

    Attributes:
        cells: (10, 10) int array of CellType values, row 0 at the top
        map_id: Environment index
    """
    cells: np.ndarray
    map_id: int = 0

    def __post_init__(self):
        self.cells.setflags(write=False)

    @cached_property
    def source(self) -> Position:
        row, col = np.argwhere(self.cells == CellType.SOURCE)[0]
        return int(row), int(col)

    @cached_property
    def goals(self) -> List[Position]:
        return [(int(r), int(c)) for r, c in np.argwhere(self.cells == CellType.GOAL)]

    @cached_property
    def goal_distance(self) -> np.ndarray:
        """Manhattan distance from every cell to its nearest goal."""
        rows, cols = np.indices(self.cells.shape)
        distances = [np.abs(rows - r) + np.abs(cols - c) for r, c in self.goals]
        return np.min(distances, axis=0)

    def in_bounds(self, pos: Position) -> bool:
        return 0 <= pos[0] < GRID_SIZE and 0 <= pos[1] < GRID_SIZE

    def cell(self, pos: Position) -> CellType:
        return CellType(int(self.cells[pos]))

    def render(self) -> str:
        chars = {v: k for k, v in _CHAR_TO_CELL.items()}
        return "\n".join("".join(chars[CellType(v)] for v in row) for row in self.cells)


def load_map(text: str, map_id: int = 0) -> GridMap:
    """
    Parse a map from its text form.

    Args:
        text: 10 lines of 10 characters
        map_id: Environment index stored on the map

    Returns:
        Validated GridMap

    Raises:
        MapDimensionError: Wrong number of lines or line width
        IllegalCellError: Character outside '.HGS'
        SourceCountError: Zero or several 'S'
        GoalCountError: No 'G'
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()

    if len(lines) != GRID_SIZE:
        raise MapDimensionError(
            f"Map must have {GRID_SIZE} lines, found {len(lines)}",
            details=f"lines={len(lines)}",
        )
    for row, line in enumerate(lines):
        if len(line) != GRID_SIZE:
            raise MapDimensionError(
                f"Map line {row} has {len(line)} cells, expected {GRID_SIZE}",
                details=f"row={row}",
            )

    cells = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.int8)
    for row, line in enumerate(lines):
        for col, char in enumerate(line):
            if char not in _CHAR_TO_CELL:
                raise IllegalCellError(char, row, col)
            cells[row, col] = _CHAR_TO_CELL[char]

    sources = int(np.sum(cells == CellType.SOURCE))
    if sources != 1:
        raise SourceCountError(sources)
    if not np.any(cells == CellType.GOAL):
        raise GoalCountError()

    return GridMap(cells=cells, map_id=map_id)


def load_map_file(path: Path, map_id: int = 0) -> GridMap:
    """Load a map from a text file."""
    return load_map(Path(path).read_text(encoding="utf-8"), map_id=map_id)


@lru_cache(maxsize=4)
def _load_directory(directory: Path) -> Tuple[GridMap, ...]:
    files = sorted(directory.glob("*.txt"))
    maps = tuple(load_map_file(f, map_id=i) for i, f in enumerate(files))
    logger.debug(f"Loaded {len(maps)} maps from {directory}")
    return maps


def load_bundled_maps(count: int = BUNDLED_MAP_COUNT, directory: Optional[Path] = None) -> List[GridMap]:
    """
    Return the first `count` maps, one per agent.

    Args:
        count: Number of maps (agents)
        directory: Custom map directory; defaults to the bundled layouts

    Raises:
        ConfigError: If fewer than `count` maps are available
    """
    maps = _load_directory(Path(directory) if directory else BUNDLED_MAPS_DIR)
    if count > len(maps):
        raise ConfigError(f"Requested {count} maps but only {len(maps)} are available", field="n_agents")
    return list(maps[:count])
