"""
Federated training module - local Q-learning plus smoothing-average aggregation.

- agent.py      : run_episode, TD target/gradient, td_update, epsilon schedule
- server.py     : ServerState, aggregate, alpha_schedule
- evaluation.py : greedy success-rate evaluation (with transient read faults)
- trainer.py    : train_federated and its logs
"""
from src.fedtrain.agent import (
    Agent,
    EpisodeResult,
    Transition,
    epsilon_at,
    q_value_and_grad,
    run_episode,
    td_loss_and_grad,
    td_target,
    td_update,
)
from src.fedtrain.server import ServerState, aggregate, alpha_schedule
from src.fedtrain.evaluation import evaluate_agent, evaluate_success_rate, greedy_rollout
from src.fedtrain.trainer import (
    FederatedTrainer,
    TrainingResult,
    agent_rng,
    episode_log_columns,
    train_federated,
)

__all__ = [
    "Agent",
    "EpisodeResult",
    "Transition",
    "epsilon_at",
    "q_value_and_grad",
    "run_episode",
    "td_loss_and_grad",
    "td_target",
    "td_update",
    "ServerState",
    "aggregate",
    "alpha_schedule",
    "evaluate_agent",
    "evaluate_success_rate",
    "greedy_rollout",
    "FederatedTrainer",
    "TrainingResult",
    "agent_rng",
    "episode_log_columns",
    "train_federated",
]
