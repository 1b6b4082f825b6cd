"""
GridWorld dynamics - observation, transition, reward and success accounting.

The agent sees only its four neighbours, encoded -1 for hell (or the wall
beyond the grid edge), +1 for goal and 0 otherwise. Moving off the grid
keeps the agent in place.
"""
import itertools
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from src.gridworld.maps import CellType, GridMap, Position

MAX_STEPS = 200

REWARD_HELL = -1.0
REWARD_GOAL = 1.0
REWARD_CLOSER = 0.1
REWARD_AWAY = -0.1
REWARD_VALUES = (REWARD_HELL, REWARD_GOAL, REWARD_CLOSER, REWARD_AWAY)


class Action(IntEnum):
    """Action indices, matching the observation order."""
    UP = 0
    DOWN = 1
    RIGHT = 2
    LEFT = 3


N_ACTIONS = len(Action)

_MOVES = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.RIGHT: (0, 1),
    Action.LEFT: (0, -1),
}

_CELL_OBSERVATION = {
    CellType.FREE: 0,
    CellType.SOURCE: 0,
    CellType.HELL: -1,
    CellType.GOAL: 1,
}
OFF_GRID_OBSERVATION = -1


class Observation(NamedTuple):
    """Neighbour encoding in the fixed order (up, down, right, left)."""
    up: int
    down: int
    right: int
    left: int

    def as_array(self) -> np.ndarray:
        return np.asarray(self, dtype=np.float64)

    @property
    def state_id(self) -> int:
        """Position of this observation among the 81 possible ones."""
        return sum((v + 1) * 3 ** k for k, v in enumerate(reversed(self)))


class Outcome(str, Enum):
    ONGOING = "ongoing"
    REACHED_GOAL = "reached_goal"
    HIT_HELL = "hit_hell"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class StepResult:
    """
    Result of one transition.

    Attributes:
        next_position: Agent position after the move
        reward: One of -1, +1, +0.1, -0.1
        terminal: Whether the episode ended
        outcome: ONGOING unless the agent reached a goal or hit hell
        goal_distance: Manhattan distance to the nearest goal after the move
    """
    next_position: Position
    reward: float
    terminal: bool
    outcome: Outcome
    goal_distance: int


def _check_position(grid: GridMap, pos: Position) -> None:
    if not grid.in_bounds(pos):
        raise ValueError(f"Position {pos} is outside the 10x10 grid")


def observe(grid: GridMap, pos: Position) -> Observation:
    """
    Encode the four neighbours of `pos`.

    Raises:
        ValueError: If pos is outside the grid
    """
    _check_position(grid, pos)
    values = []
    for action in Action:
        dr, dc = _MOVES[action]
        neighbour = (pos[0] + dr, pos[1] + dc)
        if grid.in_bounds(neighbour):
            values.append(_CELL_OBSERVATION[grid.cell(neighbour)])
        else:
            values.append(OFF_GRID_OBSERVATION)
    return Observation(*values)


def step(
    grid: GridMap,
    pos: Position,
    action: int,
    goal_distance_before: Optional[int] = None,
) -> StepResult:
    """
    Apply one action.

    Args:
        grid: The maze
        pos: Current position
        action: Action index (up, down, right, left)
        goal_distance_before: Distance to the nearest goal at `pos`;
            computed from the map when omitted

    Returns:
        StepResult. Reward is -1 on hell, +1 on goal, otherwise +0.1 if the
        distance to the nearest goal strictly decreased and -0.1 if not.
    """
    _check_position(grid, pos)
    action = Action(action)
    if goal_distance_before is None:
        goal_distance_before = int(grid.goal_distance[pos])

    dr, dc = _MOVES[action]
    target = (pos[0] + dr, pos[1] + dc)
    if not grid.in_bounds(target):
        # Wall: stay in place
        return StepResult(pos, REWARD_AWAY, False, Outcome.ONGOING, goal_distance_before)

    distance = int(grid.goal_distance[target])
    cell = grid.cell(target)
    if cell == CellType.HELL:
        return StepResult(target, REWARD_HELL, True, Outcome.HIT_HELL, distance)
    if cell == CellType.GOAL:
        return StepResult(target, REWARD_GOAL, True, Outcome.REACHED_GOAL, distance)

    reward = REWARD_CLOSER if distance < goal_distance_before else REWARD_AWAY
    return StepResult(target, reward, False, Outcome.ONGOING, distance)


def success_rate(outcomes: Sequence[Outcome]) -> float:
    """
    Fraction of attempts that reached a goal.

    Raises:
        ValueError: If outcomes is empty
    """
    if len(outcomes) == 0:
        raise ValueError("success_rate of an empty outcome list")
    return sum(1 for o in outcomes if o == Outcome.REACHED_GOAL) / len(outcomes)


def all_observations() -> List[Observation]:
    """All 81 observation vectors, ordered by Observation.state_id."""
    return [Observation(*values) for values in itertools.product((-1, 0, 1), repeat=4)]
