from __future__ import annotations as _annotations

from importlib.metadata import version as _metadata_version

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .exceptions import SwarmError
from .harness import compare_observation_models, evaluate, replay_dump, run_training

__version__ = _metadata_version('swarm_rl')
__all__ = (
    '__version__',
    'RunConfig',
    'SwarmError',
    'load_config',
    'load_checkpoint',
    'save_checkpoint',
    'run_training',
    'evaluate',
    'replay_dump',
    'compare_observation_models',
)
