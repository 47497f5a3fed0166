"""Desk-scale learning runs, each takes on the order of an hour. Run with `pytest --run-slow`."""

from __future__ import annotations as _annotations

from pathlib import Path

import pytest

from swarm_rl.checkpoint import load_checkpoint
from swarm_rl.config import RunConfig
from swarm_rl.harness import compare_observation_models, evaluate, run_training
from swarm_rl.protocols import ProtocolConfig
from swarm_rl.tasks import LinkTask
from swarm_rl.trpo import TrpoConfig

pytestmark = pytest.mark.slow


def test_edge_task_beats_random_policy(tmp_path: Path):
    config = RunConfig(trpo=TrpoConfig(iterations=300), output_directory=tmp_path / 'edge', workers=4)
    result = run_training(config)

    initial = load_checkpoint(result.output_directory / 'checkpoints' / 'iter_0000.ckpt')
    baseline = evaluate(initial.params, config, n_episodes=20, deterministic=False)
    trained = evaluate(result.params, config, n_episodes=20)
    assert trained.mean_return >= 5 * max(baseline.mean_return, 1.0)


def test_link_task_establishes_link(tmp_path: Path):
    config = RunConfig(
        task=LinkTask(),
        protocol=ProtocolConfig(mode='2dsp'),
        trpo=TrpoConfig(iterations=300),
        output_directory=tmp_path / 'link',
        workers=4,
    )
    result = run_training(config)

    initial = load_checkpoint(result.output_directory / 'checkpoints' / 'iter_0000.ckpt')
    baseline = evaluate(initial.params, config, n_episodes=20, deterministic=False)
    trained = evaluate(result.params, config, n_episodes=20)
    assert baseline.link_established_fraction is not None and baseline.link_established_fraction < 0.02
    assert trained.link_established_fraction is not None and trained.link_established_fraction >= 0.3


def test_link_observation_ordering(tmp_path: Path):
    config = RunConfig(
        task=LinkTask(),
        protocol=ProtocolConfig(mode='2dsp'),
        trpo=TrpoConfig(iterations=100),
        output_directory=tmp_path / 'compare',
        workers=4,
    )
    rows = compare_observation_models(config, ['2dsp', '2d', 'sensor'], [2], seeds=[0, 1, 2])
    finals = {row.mode: row.mean_final_return for row in rows}
    # averaged over seeds, single-seed inversions are expected
    if not finals['2dsp'] >= finals['2d'] >= finals['sensor']:
        pytest.xfail(f'observation models out of order: {finals}')
