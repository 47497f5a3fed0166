from __future__ import annotations as _annotations

from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pytest

from swarm_rl.config import PolicySettings, RunConfig
from swarm_rl.protocols import ProtocolConfig
from swarm_rl.sim import SimConfig, WorldState
from swarm_rl.tasks import LinkTask
from swarm_rl.trpo import TrpoConfig

MakeWorld = Callable[..., WorldState]


def pytest_addoption(parser: pytest.Parser):
    parser.addoption('--run-slow', action='store_true', default=False, help='Run the desk-scale learning tests')


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]):
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def make_world() -> MakeWorld:
    """Build a `WorldState` at rest from plain position lists."""

    def make(
        positions: Sequence[Sequence[float]],
        orientations: Sequence[float] | None = None,
        pois: Sequence[Sequence[float]] | None = None,
        arena: tuple[float, float] = (1.0, 1.0),
    ) -> WorldState:
        xy = np.array(positions, dtype=np.float64).reshape(-1, 2)
        m = xy.shape[0]
        return WorldState(
            positions=xy,
            orientations=np.zeros(m) if orientations is None else np.array(orientations, dtype=np.float64),
            linear_velocities=np.zeros((m, 2)),
            angular_velocities=np.zeros(m),
            pois=np.zeros((0, 2)) if pois is None else np.array(pois, dtype=np.float64).reshape(-1, 2),
            arena_width=arena[0],
            arena_height=arena[1],
        )

    return make


@pytest.fixture
def tiny_config(tmp_path: Path) -> RunConfig:
    """Edge task with a small swarm, short episodes and a small network."""
    return RunConfig(
        sim=SimConfig(n_agents=4, episode_length=12),
        policy=PolicySettings(slot_hidden1=8, slot_hidden2=4, trunk_hidden=8),
        trpo=TrpoConfig(iterations=2, episodes_per_iteration=2),
        output_directory=tmp_path / 'run',
        eval_episodes=2,
    )


@pytest.fixture
def tiny_link_config(tmp_path: Path) -> RunConfig:
    return RunConfig(
        task=LinkTask(),
        protocol=ProtocolConfig(mode='2dsp'),
        sim=SimConfig(n_agents=5, episode_length=10),
        policy=PolicySettings(slot_hidden1=8, slot_hidden2=4, trunk_hidden=8),
        trpo=TrpoConfig(iterations=1, episodes_per_iteration=2),
        output_directory=tmp_path / 'link-run',
        eval_episodes=2,
    )
