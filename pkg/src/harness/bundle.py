"""
Policy bundles - trained agents packaged for inference campaigns.

A bundle is a directory:

    manifest.json        BundleManifest (config, format, per-agent files)
    agent_00.ckpt ...    parameter snapshots (policy codec)
    map_00.txt ...       each agent's map in text form
"""
import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError

from src.core.exceptions import CheckpointError, CheckpointIntegrityError, ConfigError, NotConvergedError
from src.core.logging_config import get_logger
from src.fedtrain import TrainingResult, evaluate_success_rate
from src.gridworld import GridMap, load_map_file
from src.models import TrainConfig
from src.policy import (
    MLPPolicy,
    atomic_write_bytes,
    encode_codes_file,
    flatten_params,
    load_params,
    read_codes_file,
)

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"


class BundleAgent(BaseModel):
    agent: int = Field(ge=0)
    codes_file: str
    map_file: str
    digest: str


class BundleManifest(BaseModel):
    """Index of a bundle directory."""
    name: str = "bundle"
    train: TrainConfig
    layer_dims: Tuple[int, ...]
    fmt: str
    rounds: int = 0
    success_rate: Optional[float] = None
    agents: List[BundleAgent]


class PolicyBundle:
    """
    Per-agent policies with their maps.

    Example:
        >>> bundle = PolicyBundle.from_training(result)
        >>> bundle.save(Path("results/bundle"))
        >>> PolicyBundle.load(Path("results/bundle")).success_rate()
    """

    def __init__(
        self,
        policies: Sequence[MLPPolicy],
        maps: Sequence[GridMap],
        config: TrainConfig,
        rounds: int = 0,
        name: str = "bundle",
    ):
        if len(policies) != len(maps):
            raise ConfigError(f"Bundle has {len(policies)} policies but {len(maps)} maps", field="maps")
        self.policies = list(policies)
        self.maps = list(maps)
        self.config = config
        self.rounds = rounds
        self.name = name
        self._success_rate: Optional[float] = None

    @classmethod
    def from_training(cls, result: TrainingResult, name: str = "bundle") -> "PolicyBundle":
        return cls(result.policies, result.maps, result.config, result.rounds, name)

    def __len__(self) -> int:
        return len(self.policies)

    def success_rate(self, attempts: int = 1000) -> float:
        """Fault-free mean greedy SR (cached)."""
        if self._success_rate is None:
            rates = evaluate_success_rate(self.policies, self.maps, attempts, max_steps=self.config.max_steps)
            self._success_rate = float(rates.mean())
        return self._success_rate

    def subset(self, n_agents: int) -> Tuple[List[MLPPolicy], List[GridMap]]:
        """The first n agents (for agent-count studies at inference)."""
        if not 1 <= n_agents <= len(self):
            raise ConfigError(f"Bundle has {len(self)} agents, {n_agents} requested", field="agent_counts")
        return self.policies[:n_agents], self.maps[:n_agents]

    def save(self, directory: Path) -> Path:
        """
        Write the bundle; files are written atomically.

        Returns:
            Path of the manifest

        Raises:
            CheckpointError: If a file cannot be written
        """
        directory = Path(directory)
        agents = []
        for i, (policy, grid) in enumerate(zip(self.policies, self.maps)):
            data = encode_codes_file(flatten_params(policy), policy.layer_dims, self.rounds)
            codes_file, map_file = f"agent_{i:02d}.ckpt", f"map_{i:02d}.txt"
            atomic_write_bytes(directory / codes_file, data)
            atomic_write_bytes(directory / map_file, (grid.render() + "\n").encode("utf-8"))
            agents.append(BundleAgent(agent=i, codes_file=codes_file, map_file=map_file, digest=data[-32:].hex()))

        manifest = BundleManifest(
            name=self.name,
            train=self.config,
            layer_dims=self.config.layer_dims,
            fmt=str(self.config.fmt),
            rounds=self.rounds,
            success_rate=self._success_rate,
            agents=agents,
        )
        path = directory / MANIFEST_NAME
        atomic_write_bytes(path, manifest.model_dump_json(indent=2).encode("utf-8"))
        logger.info(f"Saved bundle '{self.name}' ({len(self)} agents) to {directory}")
        return path

    @classmethod
    def load(cls, directory: Path) -> "PolicyBundle":
        """
        Read and verify a bundle directory.

        Raises:
            CheckpointError: If a file is missing or unreadable
            CheckpointIntegrityError: If a snapshot does not match its manifest digest
        """
        directory = Path(directory)
        try:
            text = (directory / MANIFEST_NAME).read_text(encoding="utf-8")
            manifest = BundleManifest.model_validate(json.loads(text))
        except OSError as e:
            raise CheckpointError(f"Cannot read bundle manifest in {directory}", details=str(e)) from e
        except (ValueError, ValidationError) as e:
            raise CheckpointIntegrityError(f"Invalid bundle manifest in {directory}", details=str(e)) from e

        policies, maps = [], []
        for entry in sorted(manifest.agents, key=lambda a: a.agent):
            decoded = read_codes_file(directory / entry.codes_file)
            if decoded.digest != entry.digest:
                raise CheckpointIntegrityError(
                    f"Snapshot {entry.codes_file} does not match the manifest", details=f"agent={entry.agent}"
                )
            policy = MLPPolicy(decoded.layer_dims, decoded.codes.fmt)
            load_params(policy, decoded.codes, keep_residual=False)
            policies.append(policy)
            try:
                maps.append(load_map_file(directory / entry.map_file, map_id=entry.agent))
            except OSError as e:
                raise CheckpointError(f"Cannot read bundle map {entry.map_file}", details=str(e)) from e

        bundle = cls(policies, maps, manifest.train, manifest.rounds, manifest.name)
        bundle._success_rate = manifest.success_rate
        logger.info(f"Loaded bundle '{manifest.name}' ({len(bundle)} agents) from {directory}")
        return bundle


def requantized(policies: Sequence[MLPPolicy], fmt) -> List[MLPPolicy]:
    """Policies re-expressed in `fmt` (copies; unchanged when already in fmt)."""
    return [p.copy() if p.fmt == fmt else p.requantize(fmt) for p in policies]


def converged_or_raise(bundle: PolicyBundle, required: float, attempts: int = 1000) -> float:
    """
    Check a bundle meets the convergence bar for inference campaigns.

    Raises:
        NotConvergedError: If its fault-free SR is below `required`
    """
    sr = bundle.success_rate(attempts)
    if sr < required:
        raise NotConvergedError(sr, required)
    return sr
