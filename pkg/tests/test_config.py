from __future__ import annotations as _annotations

from pathlib import Path

import pytest
from inline_snapshot import snapshot
from pydantic import ValidationError

from swarm_rl.config import RunConfig, apply_overrides, load_config, write_frozen_config
from swarm_rl.exceptions import ConfigError
from swarm_rl.protocols import ProtocolConfig
from swarm_rl.sim import SimConfig
from swarm_rl.tasks import LinkParams, LinkTask


def test_default_config():
    config = RunConfig()
    assert config.obs_dim == 36
    spec = config.policy_spec()
    assert spec.model_dump() == snapshot(
        {
            'history_length': 2,
            'obs_dim': 36,
            'action_dim': 2,
            'slot_hidden1': 128,
            'slot_hidden2': 16,
            'trunk_hidden': 64,
            'activation': 'tanh',
        }
    )


def test_link_config_dimension():
    config = RunConfig(task=LinkTask(), protocol=ProtocolConfig(mode='2dsp'))
    assert config.obs_dim == 100


@pytest.mark.parametrize(
    'kwargs,message',
    [
        pytest.param(
            {'protocol': ProtocolConfig(mode='2dsp')}, "'2dsp' is only valid for the link task", id='2dsp-edge'
        ),
        pytest.param(
            {'task': LinkTask(params=LinkParams(link_radius=0.3))},
            'link_radius must equal protocol.comm_radius',
            id='link-radius',
        ),
        pytest.param(
            {'protocol': ProtocolConfig(sp_max_distance=1.0)}, 'below the arena diagonal', id='sp-cap-too-small'
        ),
        pytest.param(
            {'task': LinkTask(), 'sim': SimConfig(arena_width=0.5, arena_height=0.5)},
            'too small to place two points of interest',
            id='pois-do-not-fit',
        ),
        pytest.param({'sim': {'n_agents': 0}}, 'greater than 0', id='no-agents'),
        pytest.param({'workers': 1, 'unknown': 3}, 'Extra inputs are not permitted', id='extra-field'),
    ],
)
def test_invalid_config(kwargs: dict[str, object], message: str):
    with pytest.raises(ValidationError, match=message):
        RunConfig.model_validate(kwargs)


def test_frozen_config_round_trip(tmp_path: Path):
    config = RunConfig(task=LinkTask(), protocol=ProtocolConfig(mode='2dsp'), master_seed=7)
    path = write_frozen_config(config, tmp_path / 'nested' / 'config.json')
    assert load_config(path) == config
    assert '"sp_max_distance": 1.5' in path.read_text()


def test_load_config_overrides(tmp_path: Path):
    path = write_frozen_config(RunConfig(), tmp_path / 'config.json')
    config = load_config(path, {'master_seed': 3, 'output_directory': tmp_path / 'out', 'sim.n_agents': 20})
    assert config.master_seed == 3
    assert config.output_directory == tmp_path / 'out'
    assert config.sim.n_agents == 20
    assert config.sim.episode_length == 500


def test_load_config_overrides_complete_the_file(tmp_path: Path):
    path = tmp_path / 'config.json'
    path.write_text('{"protocol": {"mode": "2dsp"}, "sim": {"n_agents": 0}}')
    with pytest.raises(ConfigError, match='invalid config'):
        load_config(path)

    config = load_config(path, {'task.kind': 'link', 'sim.n_agents': 6})
    assert isinstance(config.task, LinkTask)
    assert config.protocol.mode == '2dsp'
    assert config.sim.n_agents == 6


def test_load_config_not_an_object(tmp_path: Path):
    path = tmp_path / 'config.json'
    path.write_text('[1, 2]')
    with pytest.raises(ConfigError, match='expected a JSON object'):
        load_config(path)


def test_load_config_missing_file(tmp_path: Path):
    with pytest.raises(ConfigError, match='cannot read config'):
        load_config(tmp_path / 'missing.json')


def test_load_config_invalid(tmp_path: Path):
    path = tmp_path / 'config.json'
    path.write_text('{"task": {"kind": "circle"}}')
    with pytest.raises(ConfigError, match='invalid config') as exc_info:
        load_config(path)
    assert exc_info.value.category == 'config-error'
    assert exc_info.value.exit_code == 2


@pytest.mark.parametrize(
    'overrides,message',
    [
        pytest.param({'sim.colour': 'red'}, 'Extra inputs are not permitted', id='unknown-leaf'),
        pytest.param({'master_seed.value': 1}, 'unknown config section', id='scalar-section'),
        pytest.param({'protocol.mode': '2dsp'}, 'only valid for the link task', id='cross-check'),
    ],
)
def test_bad_overrides(overrides: dict[str, object], message: str):
    with pytest.raises(ConfigError, match=message):
        apply_overrides(RunConfig(), overrides)
