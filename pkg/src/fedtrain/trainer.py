"""
Federated training loop.

Every episode, each agent plays on its own map and updates its policy
locally; agents run in parallel between aggregation barriers. After every
C-th episode all agents upload, the server aggregates and broadcasts, and
each agent loads its broadcast parameters (keeping its sub-LSB residual).

Fault plan hooks fire at their scheduled points; a guard, when present,
watches episode returns, checkpoints the server and triggers recovery.
"""
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.core.exceptions import ConfigError
from src.core.logging_config import LoggerMixin
from src.core.validators import validate_map_count
from src.faultinj import FaultPlan, HookContext, HookPoint, InjectionLog, ReadFault, apply_fault_plan
from src.fedtrain.agent import Agent, EpisodeResult, epsilon_at, run_episode, td_update
from src.fedtrain.evaluation import evaluate_success_rate
from src.fedtrain.server import ServerState, aggregate
from src.gridworld import GridMap, Outcome
from src.models import TrainConfig
from src.policy import ActionMode, MLPPolicy, flatten_params, load_params

EVAL_LOG_COLUMNS = ["episode", "mean_sr"]

# (episode, mean greedy SR) -> stop training
StopCondition = Callable[[int, float], bool]


def episode_log_columns(sr_window: int = 100) -> List[str]:
    return ["episode", "agent", "return", "outcome", "epsilon", "alpha", "flips_injected", f"sr_window{sr_window}"]


@dataclass
class TrainingResult:
    """
    Output of one federated run.

    Attributes:
        policies: Trained policy per agent
        maps: Map per agent
        episode_log: One row per (episode, agent)
        eval_log: Periodic greedy evaluation (empty unless eval_every is set)
        injection_log: Every flip the fault plan performed
        guard_events: Guard event log (None without a guard)
        rounds: Aggregation rounds performed (communication cost)
        episodes_run: Episodes actually run (< config.episodes on early stop)
        wall_clock_s: Elapsed time
    """
    config: TrainConfig
    policies: List[MLPPolicy]
    maps: List[GridMap]
    episode_log: pd.DataFrame
    eval_log: pd.DataFrame
    injection_log: InjectionLog = field(default_factory=InjectionLog)
    guard_events: Optional[pd.DataFrame] = None
    rounds: int = 0
    episodes_run: int = 0
    wall_clock_s: float = 0.0

    def final_success_rate(self, attempts: Optional[int] = None) -> float:
        """Mean greedy SR of the trained policies."""
        attempts = attempts or self.config.eval_attempts
        rates = evaluate_success_rate(self.policies, self.maps, attempts, max_steps=self.config.max_steps)
        return float(rates.mean())

    def save_logs(self, directory: Path, prefix: str = "") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.episode_log.to_csv(directory / f"{prefix}episodes.csv", index=False, float_format="%.6g")
        self.injection_log.to_csv(directory / f"{prefix}injections.csv")
        if not self.eval_log.empty:
            self.eval_log.to_csv(directory / f"{prefix}evaluations.csv", index=False, float_format="%.6g")
        if self.guard_events is not None:
            self.guard_events.to_csv(directory / f"{prefix}guard_events.csv", index=False)


def agent_rng(seed: int, agent_id: int, episode: int) -> np.random.Generator:
    """Exploration stream of one agent-episode."""
    return np.random.default_rng(np.random.SeedSequence([seed, agent_id, episode]))


class FederatedTrainer(LoggerMixin):
    """
    Runs train_federated; kept as a class so the loop state stays in one place.

    Example:
        >>> trainer = FederatedTrainer(config, load_bundled_maps(12))
        >>> result = trainer.run()
    """

    def __init__(
        self,
        config: TrainConfig,
        maps: Sequence[GridMap],
        fault_plan: Optional[FaultPlan] = None,
        guard=None,
        workers: int = 1,
        stop_condition: Optional[StopCondition] = None,
    ):
        ok, error = validate_map_count(config.n_agents, len(maps))
        if not ok:
            raise ConfigError(error, field="n_agents")
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}", field="workers")
        if fault_plan is not None and fault_plan.n_agents != config.n_agents:
            raise ConfigError(
                f"Fault plan built for {fault_plan.n_agents} agents, config has {config.n_agents}",
                field="n_agents",
            )

        self.config = config
        self.maps = list(maps)
        self.plan = fault_plan
        self.guard = guard
        self.workers = workers
        self.stop_condition = stop_condition

        init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2**31 - 1]))
        initial = MLPPolicy.init(config.layer_dims, config.fmt, init_rng)
        # All agents start from the same parameters, as after an initial broadcast
        self.agents = [Agent(i, grid, initial.copy()) for i, grid in enumerate(self.maps)]
        self.server = ServerState(config.n_agents, config.fmt, config.alpha0, config.alpha_tau)

        self._rows: List[tuple] = []
        self._eval_rows: List[tuple] = []
        self._outcomes = [deque(maxlen=config.sr_window) for _ in self.agents]
        self._solo_rounds = 0

    @property
    def policies(self) -> List[MLPPolicy]:
        return [a.policy for a in self.agents]

    def _play(self, agent: Agent, episode: int, epsilon: float, read: Optional[ReadFault]) -> EpisodeResult:
        cfg = self.config
        result = run_episode(
            agent,
            ActionMode.epsilon_greedy(epsilon),
            agent_rng(cfg.seed, agent.agent_id, episode),
            gamma=cfg.gamma,
            max_steps=cfg.max_steps,
            read_fault=read,
        )
        td_update(agent.policy, result.transitions, cfg.gamma, cfg.lr)
        return result

    def _pre_episode_faults(self, episode: int, flips: Dict[int, int]) -> Dict[int, ReadFault]:
        if self.plan is None:
            return {}
        codes = {a.agent_id: flatten_params(a.policy) for a in self.agents}
        memory = apply_fault_plan(self.plan, HookPoint.PRE_EPISODE, HookContext(time=episode, codes=codes))
        for agent_id, count in memory.log.flips_by_agent().items():
            load_params(self.agents[agent_id].policy, memory.codes[agent_id], keep_residual=True)
            flips[agent_id] = flips.get(agent_id, 0) + count

        reads = apply_fault_plan(
            self.plan,
            HookPoint.ACTIVATION_READ,
            HookContext(
                time=episode,
                agents=[a.agent_id for a in self.agents],
                layer_dims=self.config.layer_dims,
                fmt=self.config.fmt,
            ),
        )
        return reads.reads

    def _aggregation_round(self, episode: int, flips: Dict[int, int]) -> None:
        n = self.config.n_agents
        uploads = {a.agent_id: flatten_params(a.policy) for a in self.agents}
        uploaded = apply_fault_plan(self.plan, HookPoint.AGENT_UPLOAD, HookContext(time=episode, codes=uploads))
        outputs = aggregate(self.server, [uploaded.codes[i] for i in range(n)])

        if self.guard is not None:
            self.guard.after_round(episode, self.server.round, self.server.consensus())

        stored = apply_fault_plan(
            self.plan,
            HookPoint.SERVER_AGGREGATE,
            HookContext(time=episode, codes=dict(enumerate(outputs))),
        )
        self.server.broadcast = [stored.codes[i] for i in range(n)]
        sent = apply_fault_plan(self.plan, HookPoint.SERVER_BROADCAST, HookContext(time=episode, codes=stored.codes))

        for log in (uploaded.log, stored.log, sent.log):
            for agent_id, count in log.flips_by_agent().items():
                flips[agent_id] = flips.get(agent_id, 0) + count
        for agent in self.agents:
            load_params(agent.policy, sent.codes[agent.agent_id], keep_residual=True)

    def _snapshot_without_server(self, episode: int) -> None:
        # Single-agent runs checkpoint the agent itself on the same cadence
        if self.guard is not None and episode % self.config.interval_at(episode) == 0:
            self._solo_rounds += 1
            self.guard.after_round(episode, self._solo_rounds, flatten_params(self.agents[0].policy))

    def _evaluate(self, episode: int) -> float:
        rates = evaluate_success_rate(
            self.policies, self.maps, self.config.eval_attempts, max_steps=self.config.max_steps
        )
        mean_sr = float(rates.mean())
        self._eval_rows.append((episode, mean_sr))
        self.logger.debug(f"Episode {episode}: greedy SR {mean_sr:.3f}")
        return mean_sr

    def run(self) -> TrainingResult:
        cfg = self.config
        started = time.perf_counter()
        self.logger.info(
            f"Training {cfg.n_agents} agents for {cfg.episodes} episodes "
            f"(C={cfg.comm_interval}, {cfg.fmt}, seed={cfg.seed})"
        )

        executor = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        episode = 0
        try:
            for episode in range(1, cfg.episodes + 1):
                epsilon = epsilon_at(episode, cfg.epsilon_start, cfg.epsilon_min, cfg.epsilon_decay)
                flips: Dict[int, int] = {}
                reads = self._pre_episode_faults(episode, flips)

                jobs = [(a, episode, epsilon, reads.get(a.agent_id)) for a in self.agents]
                if executor is None:
                    results = [self._play(*job) for job in jobs]
                else:
                    results = list(executor.map(lambda job: self._play(*job), jobs))

                for agent, result in zip(self.agents, results):
                    if len(result.read_log):
                        self.plan.record(result.read_log)
                        flips[agent.agent_id] = flips.get(agent.agent_id, 0) + len(result.read_log)

                if self.guard is not None:
                    self.guard.after_episode(
                        episode, [r.episode_return for r in results], self.server, self.policies
                    )

                alpha = self.server.current_alpha()
                if cfg.aggregates_after(episode):
                    self._aggregation_round(episode, flips)
                elif cfg.n_agents == 1:
                    self._snapshot_without_server(episode)

                self._log_episode(episode, results, epsilon, alpha, flips)

                if cfg.eval_every and episode % cfg.eval_every == 0:
                    mean_sr = self._evaluate(episode)
                    if self.stop_condition is not None and self.stop_condition(episode, mean_sr):
                        self.logger.info(f"Stop condition met at episode {episode}")
                        break
        finally:
            if executor is not None:
                executor.shutdown(wait=True)
            if self.guard is not None:
                self.guard.close()

        elapsed = time.perf_counter() - started
        self.logger.info(
            f"Training finished: {episode} episodes, {self.server.round} aggregation rounds, {elapsed:.1f}s"
        )
        return TrainingResult(
            config=cfg,
            policies=self.policies,
            maps=self.maps,
            episode_log=pd.DataFrame(self._rows, columns=episode_log_columns(cfg.sr_window)),
            eval_log=pd.DataFrame(self._eval_rows, columns=EVAL_LOG_COLUMNS),
            injection_log=self.plan.log if self.plan is not None else InjectionLog(),
            guard_events=self.guard.events.to_dataframe() if self.guard is not None else None,
            rounds=self.server.round,
            episodes_run=episode,
            wall_clock_s=elapsed,
        )

    def _log_episode(
        self,
        episode: int,
        results: Sequence[EpisodeResult],
        epsilon: float,
        alpha: float,
        flips: Dict[int, int],
    ) -> None:
        for agent, result in zip(self.agents, results):
            window = self._outcomes[agent.agent_id]
            window.append(result.outcome == Outcome.REACHED_GOAL)
            self._rows.append(
                (
                    episode,
                    agent.agent_id,
                    result.episode_return,
                    result.outcome.value,
                    epsilon,
                    alpha,
                    flips.get(agent.agent_id, 0),
                    sum(window) / len(window),
                )
            )


def train_federated(
    config: TrainConfig,
    maps: Sequence[GridMap],
    fault_plan: Optional[FaultPlan] = None,
    guard=None,
    workers: int = 1,
    stop_condition: Optional[StopCondition] = None,
) -> TrainingResult:
    """
    Train n agents federatedly, one map each.

    Args:
        config: Validated training configuration
        maps: One map per agent
        fault_plan: Optional scheduled faults
        guard: Optional TrainingGuard (detection, checkpointing, recovery)
        workers: Threads running agent episodes; results do not depend on it
        stop_condition: Optional early stop on periodic evaluations

    Returns:
        TrainingResult with policies and logs

    Raises:
        ConfigError: If the maps do not match n_agents
    """
    return FederatedTrainer(config, maps, fault_plan, guard, workers, stop_condition).run()
