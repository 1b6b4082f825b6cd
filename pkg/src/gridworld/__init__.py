"""
GridWorld module - the 10x10 maze MDP.

- maps.py : CellType, GridMap, map parsing and the bundled layouts
- env.py  : observation, step dynamics, rewards and success rate
"""
from src.gridworld.maps import (
    CellType,
    GridMap,
    GRID_SIZE,
    load_map,
    load_map_file,
    load_bundled_maps,
)
from src.gridworld.env import (
    Action,
    N_ACTIONS,
    MAX_STEPS,
    Observation,
    Outcome,
    StepResult,
    observe,
    step,
    success_rate,
    all_observations,
)

__all__ = [
    "CellType",
    "GridMap",
    "GRID_SIZE",
    "load_map",
    "load_map_file",
    "load_bundled_maps",
    "Action",
    "N_ACTIONS",
    "MAX_STEPS",
    "Observation",
    "Outcome",
    "StepResult",
    "observe",
    "step",
    "success_rate",
    "all_observations",
]
