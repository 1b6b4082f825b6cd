"""
Shared pytest fixtures.

Campaign-level acceptance checks are marked slow and only run with
`pytest --runslow`.
"""
from pathlib import Path

import numpy as np
import pytest

from src.fxp import QFormat
from src.gridworld import load_bundled_maps, load_map
from src.models import DetectorConfig, TrainConfig
from src.policy import MLPPolicy

OPEN_MAP = "\n".join(
    [
        "S.........",
        "..........",
        "..........",
        "..........",
        "..........",
        "..........",
        "..........",
        "..........",
        "..........",
        ".........G",
    ]
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: campaign-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def q8() -> QFormat:
    """The default 8-bit policy format Q(1,2,5)."""
    return QFormat(2, 5)


@pytest.fixture
def q16() -> QFormat:
    return QFormat(4, 11)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def open_map():
    """Empty maze with the source top-left and the goal bottom-right."""
    return load_map(OPEN_MAP)


@pytest.fixture(scope="session")
def bundled_maps():
    return load_bundled_maps(12)


@pytest.fixture
def policy(rng) -> MLPPolicy:
    return MLPPolicy.init(rng=rng)


@pytest.fixture
def tiny_config() -> TrainConfig:
    """Two agents, a handful of episodes; fast enough for unit tests."""
    return TrainConfig(
        n_agents=2,
        episodes=12,
        comm_interval=3,
        max_steps=30,
        epsilon_decay=0.9,
        alpha0=0.9,
        alpha_tau=5.0,
        seed=7,
        eval_attempts=10,
    )


@pytest.fixture
def tiny_detector() -> DetectorConfig:
    return DetectorConfig(drop_percent=25.0, consecutive=2, window=3, checkpoint_every=1)


@pytest.fixture
def tmp_out(tmp_path) -> Path:
    out = tmp_path / "out"
    out.mkdir()
    return out
