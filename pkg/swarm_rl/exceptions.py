from __future__ import annotations as _annotations

from typing import ClassVar, Literal

__all__ = (
    'ErrorCategory',
    'SwarmError',
    'ConfigError',
    'PlacementError',
    'DimensionError',
    'DivergenceError',
    'CheckpointError',
)

ErrorCategory = Literal['config-error', 'placement-error', 'dimension-error', 'divergence', 'checkpoint-error']


class SwarmError(Exception):
    """Base class for errors raised by `swarm_rl`, `category` is reported by the CLI."""

    category: ClassVar[ErrorCategory]
    exit_code: ClassVar[int]


class ConfigError(SwarmError):
    category = 'config-error'
    exit_code = 2


class PlacementError(SwarmError):
    """Rejection sampling could not place agents or points of interest."""

    category = 'placement-error'
    exit_code = 3


class DimensionError(SwarmError, ValueError):
    category = 'dimension-error'
    exit_code = 4


class DivergenceError(SwarmError):
    category = 'divergence'
    exit_code = 5


class CheckpointError(SwarmError):
    category = 'checkpoint-error'
    exit_code = 6
