from __future__ import annotations as _annotations

import logging
import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any, cast

from pydantic import BaseModel, ConfigDict, NonNegativeInt, PositiveInt, ValidationError, model_validator
from pydantic_core import from_json

from .exceptions import ConfigError
from .policy import Activation, PolicySpec
from .protocols import ProtocolConfig, observation_dim
from .sim import SimConfig
from .tasks import EdgeTask, LinkTask, TaskSpec
from .trpo import TrpoConfig

__all__ = 'PolicySettings', 'RunConfig', 'apply_overrides', 'load_config', 'write_frozen_config'

logger = logging.getLogger(__name__)


class PolicySettings(BaseModel):
    """Network sizes, the observation and action sizes follow from the rest of the `RunConfig`."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    history_length: PositiveInt = 2
    slot_hidden1: PositiveInt = 128
    slot_hidden2: PositiveInt = 16
    trunk_hidden: PositiveInt = 64
    activation: Activation = 'tanh'


class RunConfig(BaseModel):
    """Everything that determines a training run, validated as a whole."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    task: TaskSpec = EdgeTask()
    protocol: ProtocolConfig = ProtocolConfig()
    sim: SimConfig = SimConfig()
    policy: PolicySettings = PolicySettings()
    trpo: TrpoConfig = TrpoConfig()
    master_seed: int = 0
    output_directory: Path = Path('runs/default')
    eval_episodes: PositiveInt = 20
    checkpoint_every: PositiveInt = 10
    workers: NonNegativeInt = 1

    @model_validator(mode='after')
    def _check_consistency(self) -> RunConfig:
        if self.protocol.mode == '2dsp' and not isinstance(self.task, LinkTask):
            raise ValueError("observation mode '2dsp' is only valid for the link task")
        if self.protocol.sp_max_distance < self.sim.arena_diagonal:
            raise ValueError(
                f'protocol.sp_max_distance {self.protocol.sp_max_distance} is below the arena diagonal '
                f'{self.sim.arena_diagonal:.4f}'
            )
        if isinstance(self.task, LinkTask):
            params = self.task.params
            if not math.isclose(params.link_radius, self.protocol.comm_radius):
                raise ValueError('task.params.link_radius must equal protocol.comm_radius')
            margin = 2 * params.poi_margin
            reach = math.hypot(self.sim.arena_width - margin, self.sim.arena_height - margin)
            if reach <= params.min_separation:
                raise ValueError('the arena is too small to place two points of interest min_separation apart')
        return self

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.protocol, self.task)

    def policy_spec(self) -> PolicySpec:
        return PolicySpec(
            history_length=self.policy.history_length,
            obs_dim=self.obs_dim,
            action_dim=2,
            slot_hidden1=self.policy.slot_hidden1,
            slot_hidden2=self.policy.slot_hidden2,
            trunk_hidden=self.policy.trunk_hidden,
            activation=self.policy.activation,
        )


def apply_overrides(config: RunConfig, overrides: Mapping[str, object]) -> RunConfig:
    """Replace fields addressed by dotted keys, e.g. `{'sim.n_agents': 20}`, and validate the result as a whole.

    Raises:
        ConfigError: if a key does not name a config field or the result does not validate.
    """
    if not overrides:
        return config
    data = _merge_overrides(config.model_dump(), overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f'invalid config override:\n{exc}') from exc


def load_config(path: Path, overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Read a JSON run config, merge `overrides` (see `apply_overrides`) into it and validate the result once.

    A file that is only valid together with its overrides loads fine.

    Raises:
        ConfigError: if the file is missing, is not a JSON object or does not validate.
    """
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc
    try:
        data = from_json(raw)
    except ValueError as exc:
        raise ConfigError(f'invalid config {path}: {exc}') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'invalid config {path}: expected a JSON object')
    data = _merge_overrides(cast(dict[str, Any], data), overrides or {})
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f'invalid config {path}:\n{exc}') from exc
    logger.debug('Loaded config from %s', path)
    return config


def _merge_overrides(data: dict[str, Any], overrides: Mapping[str, object]) -> dict[str, Any]:
    for key, value in overrides.items():
        *parents, leaf = key.split('.')
        section = data
        for name in parents:
            # sections left out of a config file take their defaults
            child = section.setdefault(name, {})
            if not isinstance(child, dict):
                raise ConfigError(f'unknown config section {key!r}')
            section = cast(dict[str, Any], child)
        section[leaf] = value
    return data


def write_frozen_config(config: RunConfig, path: Path) -> Path:
    """Write the resolved config with every default spelled out, reloading it gives an equal `RunConfig`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2) + '\n')
    return path
