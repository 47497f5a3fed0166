from __future__ import annotations as _annotations

import json
from pathlib import Path

import numpy as np
import pytest
from dirty_equals import IsInt, IsStr
from inline_snapshot import snapshot

from swarm_rl.checkpoint import CheckpointHeader, load_checkpoint, require_spec, save_checkpoint
from swarm_rl.exceptions import CheckpointError
from swarm_rl.policy import PolicySpec, init_params

SPEC = PolicySpec(history_length=2, obs_dim=4, slot_hidden1=6, slot_hidden2=3, trunk_hidden=5)


@pytest.mark.parametrize('name', [pytest.param('policy.ckpt', id='binary'), pytest.param('policy.json', id='text')])
def test_save_and_load(tmp_path: Path, name: str):
    params = init_params(SPEC, 3)
    params = params.with_vector(params.vector + np.linspace(-1, 1, SPEC.n_params) / 3)
    path = save_checkpoint(params, tmp_path / 'checkpoints' / name, iteration=42)

    checkpoint = load_checkpoint(path)
    assert checkpoint.iteration == 42
    assert not checkpoint.diverged
    assert checkpoint.params.spec == SPEC
    np.testing.assert_array_equal(checkpoint.params.vector, params.vector)


def test_binary_layout(tmp_path: Path):
    params = init_params(SPEC, 0)
    path = save_checkpoint(params, tmp_path / 'policy.ckpt')
    header_line, payload = path.read_bytes().split(b'\n', 1)
    assert json.loads(header_line) == snapshot(
        {
            'magic': 'swarm-rl-policy',
            'format_version': 1,
            'dtype': '<f8',
            'spec': {
                'history_length': 2,
                'obs_dim': 4,
                'action_dim': 2,
                'slot_hidden1': 6,
                'slot_hidden2': 3,
                'trunk_hidden': 5,
                'activation': 'tanh',
            },
            'n_params': IsInt(gt=0),
            'iteration': 0,
            'diverged': False,
        }
    )
    assert len(payload) == 8 * SPEC.n_params
    np.testing.assert_array_equal(np.frombuffer(payload, dtype='<f8'), params.vector)


def test_text_layout(tmp_path: Path):
    path = save_checkpoint(init_params(SPEC, 0), tmp_path / 'policy.json', iteration=5)
    document = json.loads(path.read_text())
    assert document['header']['iteration'] == 5
    assert document['header']['magic'] == IsStr(regex='swarm-rl-.*')
    assert len(document['parameters']) == SPEC.n_params


def test_non_finite_values_survive(tmp_path: Path):
    params = init_params(SPEC, 0)
    vector = params.vector.copy()
    vector[:2] = [np.nan, np.inf]
    for name in 'diverged.ckpt', 'diverged.json':
        path = save_checkpoint(params.with_vector(vector), tmp_path / name, diverged=True)
        loaded = load_checkpoint(path)
        assert loaded.diverged
        assert np.isnan(loaded.params.vector[0]) and np.isinf(loaded.params.vector[1])


def test_truncated_payload(tmp_path: Path):
    path = save_checkpoint(init_params(SPEC, 0), tmp_path / 'policy.ckpt')
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match='payload holds'):
        load_checkpoint(path)


def test_wrong_magic(tmp_path: Path):
    header = CheckpointHeader(spec=SPEC, n_params=SPEC.n_params).model_dump(mode='json')
    header['magic'] = 'something-else'
    path = tmp_path / 'policy.ckpt'
    path.write_bytes(json.dumps(header).encode() + b'\n' + np.zeros(SPEC.n_params).tobytes())
    with pytest.raises(CheckpointError, match='invalid checkpoint header'):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path: Path):
    with pytest.raises(CheckpointError, match='cannot read checkpoint') as exc_info:
        load_checkpoint(tmp_path / 'nope.ckpt')
    assert exc_info.value.exit_code == 6


def test_require_spec():
    params = init_params(SPEC, 0)
    assert require_spec(params, SPEC) is params
    with pytest.raises(CheckpointError, match='does not match config policy'):
        require_spec(params, SPEC.model_copy(update={'history_length': 4}))
