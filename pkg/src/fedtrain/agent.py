"""
Local learning - one agent's episodes and its Q-learning update.

Acting reads the stored codes (forward); learning updates the float master
weights by one semi-gradient step per transition on the squared TD error,
then resyncs the codes once the episode is done.
"""
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.core.logging_config import get_logger
from src.faultinj import InjectionLog, ReadFault
from src.gridworld import MAX_STEPS, GridMap, Observation, Outcome, observe, step
from src.policy import ActionMode, MLPPolicy, forward, select_action
from src.policy.mlp import forward_layers, unflatten

logger = get_logger(__name__)


@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    terminal: bool


class EpisodeResult(NamedTuple):
    transitions: List[Transition]
    episode_return: float
    outcome: Outcome
    read_log: InjectionLog


@dataclass
class Agent:
    """One federated participant: its map and its policy."""
    agent_id: int
    grid: GridMap
    policy: MLPPolicy


def epsilon_at(episode: int, start: float, minimum: float, decay: float) -> float:
    """max(minimum, start * decay**episode)."""
    return max(minimum, start * decay ** episode)


def run_episode(
    agent: Agent,
    mode: ActionMode,
    rng: np.random.Generator,
    gamma: float = 0.9,
    max_steps: int = MAX_STEPS,
    read_fault: Optional[ReadFault] = None,
    weight_filter: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> EpisodeResult:
    """
    Play one episode from the source cell.

    Args:
        agent: Agent to run (its policy must be synced)
        mode: Action selection mode
        rng: Episode random stream (exploration)
        gamma: Discount for the episode return
        max_steps: Step cap; hitting it is a Timeout
        read_fault: Optional corrupted read at read_fault.step
        weight_filter: Range guard applied to the corrupted read

    Returns:
        EpisodeResult with return sum_t gamma**t * r_t

    Raises:
        CorruptedValuesError: If corrupted action values contain NaN
    """
    grid, policy = agent.grid, agent.policy
    pos = grid.source
    distance = int(grid.goal_distance[pos])
    obs = observe(grid, pos)

    transitions: List[Transition] = []
    read_log = InjectionLog()
    episode_return = 0.0
    discount = 1.0
    outcome = Outcome.TIMEOUT

    for t in range(max_steps):
        if read_fault is not None and t == read_fault.step:
            values, flips = read_fault.values(policy, obs, weight_filter)
            read_log.extend(flips)
        else:
            values = forward(policy, obs)
        action = select_action(values, mode, rng)

        result = step(grid, pos, action, distance)
        next_obs = observe(grid, result.next_position)
        transitions.append(Transition(obs, action, result.reward, next_obs, result.terminal))
        episode_return += discount * result.reward
        discount *= gamma

        pos, distance, obs = result.next_position, result.goal_distance, next_obs
        if result.terminal:
            outcome = result.outcome
            break

    return EpisodeResult(transitions, episode_return, outcome, read_log)


def q_value_and_grad(
    params: np.ndarray,
    layer_dims: Sequence[int],
    obs: np.ndarray,
    action: int,
) -> Tuple[float, np.ndarray]:
    """
    Q(obs, action) and its gradient w.r.t. the flat parameter vector.

    Manual backprop through the ReLU MLP; the gradient vector uses the
    same layer-major layout as the parameters.
    """
    layers = unflatten(params, layer_dims)
    inputs = [np.asarray(obs, dtype=np.float64)]
    pre_activations = []
    h = inputs[0]
    last = len(layers) - 1
    for i, (weight, bias) in enumerate(layers):
        z = h @ weight + bias
        pre_activations.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        inputs.append(h)

    grad = np.zeros_like(params)
    grad_layers = unflatten(grad, layer_dims)
    g = np.zeros(layer_dims[-1])
    g[action] = 1.0
    for i in range(last, -1, -1):
        if i < last:
            g = g * (pre_activations[i] > 0.0)
        grad_w, grad_b = grad_layers[i]
        grad_w[:] = np.outer(inputs[i], g)
        grad_b[:] = g
        g = layers[i][0] @ g
    return float(inputs[-1][action]), grad


def td_loss_and_grad(
    params: np.ndarray,
    layer_dims: Sequence[int],
    obs: np.ndarray,
    action: int,
    target: float,
) -> Tuple[float, np.ndarray]:
    """
    Loss 0.5 * (target - Q(obs, action))**2 with a fixed target, and its gradient.

    Example:
        >>> loss, grad = td_loss_and_grad(policy.master, policy.layer_dims, obs, 2, 1.0)
    """
    q, dq = q_value_and_grad(params, layer_dims, obs, action)
    delta = target - q
    return 0.5 * delta * delta, -delta * dq


def td_target(policy: MLPPolicy, transition: Transition, gamma: float) -> float:
    """r for terminal transitions, r + gamma * max_a Q(s', a) otherwise (master weights)."""
    if transition.terminal:
        return transition.reward
    next_values = forward_layers(policy.master_layers(), transition.next_obs.as_array())
    return transition.reward + gamma * float(np.max(next_values))


def td_update(policy: MLPPolicy, transitions: Sequence[Transition], gamma: float, lr: float) -> np.ndarray:
    """
    One gradient step per transition on the master weights, then resync codes.

    Master weights saturate at the format's range after every step.

    Returns:
        The updated master weight vector
    """
    if lr != 0.0:
        for transition in transitions:
            target = td_target(policy, transition, gamma)
            _, grad = td_loss_and_grad(
                policy.master, policy.layer_dims, transition.obs.as_array(), transition.action, target
            )
            policy.master -= lr * grad
            policy.clip_master()
    policy.sync()
    return policy.master
