"""
Greedy evaluation - success rate of deployed policies.

A greedy rollout is deterministic, so without transient read faults one
rollout per agent stands for all of its attempts. With a read fault only
the step it hits can deviate; the rest of each attempt replays cached
greedy continuations.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.logging_config import get_logger
from src.faultinj import InjectionLog, ReadFault
from src.gridworld import MAX_STEPS, GridMap, Outcome, observe, step
from src.gridworld.maps import Position
from src.policy import GREEDY, MLPPolicy, select_action

logger = get_logger(__name__)

# (agent, attempt) -> read fault of that attempt, or None
ReadFaultFactory = Callable[[int, int], Optional[ReadFault]]
WeightFilter = Callable[[np.ndarray], np.ndarray]


def greedy_rollout(
    grid: GridMap,
    table: np.ndarray,
    max_steps: int = MAX_STEPS,
    start: Optional[Position] = None,
    start_step: int = 0,
) -> Tuple[Outcome, List[Position]]:
    """
    Follow argmax actions of an (81, 4) value table.

    Returns:
        Tuple of (outcome, positions visited before each step)
    """
    pos = grid.source if start is None else start
    distance = int(grid.goal_distance[pos])
    visited: List[Position] = []
    for _ in range(start_step, max_steps):
        visited.append(pos)
        obs = observe(grid, pos)
        action = select_action(table[obs.state_id], GREEDY, None)
        result = step(grid, pos, action, distance)
        if result.terminal:
            return result.outcome, visited
        pos, distance = result.next_position, result.goal_distance
    return Outcome.TIMEOUT, visited


def evaluate_agent(
    policy: MLPPolicy,
    grid: GridMap,
    attempts: int = 1000,
    max_steps: int = MAX_STEPS,
    read_fault: Optional[Callable[[int], Optional[ReadFault]]] = None,
    table: Optional[np.ndarray] = None,
    weight_filter: Optional[WeightFilter] = None,
    log: Optional[InjectionLog] = None,
) -> float:
    """
    Greedy success rate of one agent over `attempts` attempts.

    Args:
        policy: Deployed policy
        grid: The agent's map
        attempts: Number of attempts
        max_steps: Step cap per attempt
        read_fault: attempt -> ReadFault hitting that attempt (or None)
        table: Value table to act on (default: policy.value_table())
        weight_filter: Range guard applied to corrupted weight reads
        log: Collects flips performed by the reads
    """
    table = policy.value_table() if table is None else table
    clean_outcome, path = greedy_rollout(grid, table, max_steps)
    if read_fault is None:
        return 1.0 if clean_outcome == Outcome.REACHED_GOAL else 0.0

    continuations: Dict[Tuple[Position, int], Outcome] = {}
    successes = 0
    for attempt in range(attempts):
        fault = read_fault(attempt)
        outcome = clean_outcome
        if fault is not None and fault.step < len(path):
            pos = path[fault.step]
            obs = observe(grid, pos)
            values, flips = fault.values(policy, obs, weight_filter)
            if log is not None:
                log.extend(flips)
            action = select_action(values, GREEDY, None)
            if action != select_action(table[obs.state_id], GREEDY, None):
                outcome = _deviate(grid, table, pos, action, fault.step, max_steps, continuations)
        successes += outcome == Outcome.REACHED_GOAL
    return successes / attempts


def _deviate(
    grid: GridMap,
    table: np.ndarray,
    pos: Position,
    action: int,
    t: int,
    max_steps: int,
    cache: Dict[Tuple[Position, int], Outcome],
) -> Outcome:
    result = step(grid, pos, action)
    if result.terminal:
        return result.outcome
    key = (result.next_position, t + 1)
    if key not in cache:
        cache[key], _ = greedy_rollout(grid, table, max_steps, start=result.next_position, start_step=t + 1)
    return cache[key]


def evaluate_success_rate(
    policies: Sequence[MLPPolicy],
    maps: Sequence[GridMap],
    attempts: int = 1000,
    read_fault: Optional[ReadFaultFactory] = None,
    max_steps: int = MAX_STEPS,
    tables: Optional[Sequence[np.ndarray]] = None,
    weight_filters: Optional[Sequence[Optional[WeightFilter]]] = None,
    log: Optional[InjectionLog] = None,
) -> np.ndarray:
    """
    Per-agent greedy success rates; agent i is evaluated on maps[i].

    Returns:
        (n,) array of SR_i; the system SR is its mean
    """
    if len(policies) != len(maps):
        raise ValueError(f"{len(policies)} policies for {len(maps)} maps")
    rates = np.zeros(len(policies))
    for i, (policy, grid) in enumerate(zip(policies, maps)):
        per_attempt = None if read_fault is None else (lambda attempt, i=i: read_fault(i, attempt))
        rates[i] = evaluate_agent(
            policy,
            grid,
            attempts=attempts,
            max_steps=max_steps,
            read_fault=per_attempt,
            table=None if tables is None else tables[i],
            weight_filter=None if weight_filters is None else weight_filters[i],
            log=log,
        )
    return rates
