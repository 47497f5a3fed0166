"""Policy checkpoints.

Two formats share one header:

* binary (any suffix but `.json`): the header as a single JSON line, a newline, then `n_params` little-endian
  float64 values in `PolicySpec.layer_shapes` order.
* text (`.json`): `{"header": {...}, "parameters": [...]}`, for debugging and diffing.
"""

from __future__ import annotations as _annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeInt, ValidationError

from .exceptions import CheckpointError, DimensionError
from .policy import PolicyParams, PolicySpec

__all__ = (
    'CheckpointFormat',
    'CheckpointHeader',
    'Checkpoint',
    'checkpoint_format',
    'save_checkpoint',
    'load_checkpoint',
    'require_spec',
)

logger = logging.getLogger(__name__)

CheckpointFormat = Literal['binary', 'text']

FORMAT_VERSION = 1
_MAGIC = 'swarm-rl-policy'
_PAYLOAD_DTYPE = np.dtype('<f8')


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    magic: Literal['swarm-rl-policy'] = _MAGIC
    format_version: Literal[1] = FORMAT_VERSION
    dtype: Literal['<f8'] = '<f8'
    """Payload byte order and width, always little-endian float64."""
    spec: PolicySpec
    n_params: NonNegativeInt
    iteration: NonNegativeInt = 0
    diverged: bool = False


class _TextCheckpoint(BaseModel):
    model_config = ConfigDict(extra='forbid', ser_json_inf_nan='constants')

    header: CheckpointHeader
    parameters: list[float]


@dataclass(frozen=True)
class Checkpoint:
    params: PolicyParams
    iteration: int
    diverged: bool = False


def checkpoint_format(path: Path) -> CheckpointFormat:
    return 'text' if path.suffix == '.json' else 'binary'


def save_checkpoint(params: PolicyParams, path: Path, *, iteration: int = 0, diverged: bool = False) -> Path:
    """Write `params` in the format picked by the suffix of `path`."""
    header = CheckpointHeader(spec=params.spec, n_params=params.spec.n_params, iteration=iteration, diverged=diverged)
    path.parent.mkdir(parents=True, exist_ok=True)
    if checkpoint_format(path) == 'text':
        document = _TextCheckpoint(header=header, parameters=params.vector.tolist())
        path.write_text(document.model_dump_json(indent=2) + '\n')
    else:
        payload = params.vector.astype(_PAYLOAD_DTYPE, copy=False).tobytes()
        path.write_bytes(header.model_dump_json().encode() + b'\n' + payload)
    logger.info('Wrote checkpoint %s (iteration %d)', path, iteration)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`.

    Raises:
        CheckpointError: if the file is missing, has the wrong magic or version, or its payload does not match the
            parameter count of its header.
    """
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f'cannot read checkpoint {path}: {exc}') from exc

    try:
        if checkpoint_format(path) == 'text':
            document = _TextCheckpoint.model_validate_json(data)
            header = document.header
            vector = np.asarray(document.parameters, dtype=np.float64)
        else:
            header_line, newline, payload = data.partition(b'\n')
            if not newline:
                raise CheckpointError(f'{path}: missing header line')
            header = CheckpointHeader.model_validate_json(header_line)
            if len(payload) != header.n_params * _PAYLOAD_DTYPE.itemsize:
                raise CheckpointError(
                    f'{path}: payload holds {len(payload)} bytes, header announces {header.n_params} float64 values'
                )
            vector = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).astype(np.float64)
    except ValidationError as exc:
        raise CheckpointError(f'{path}: invalid checkpoint header:\n{exc}') from exc

    if header.n_params != header.spec.n_params:
        raise CheckpointError(f'{path}: header n_params {header.n_params} disagrees with its spec')
    try:
        params = PolicyParams(header.spec, vector)
    except DimensionError as exc:
        raise CheckpointError(f'{path}: {exc}') from exc
    logger.debug('Loaded checkpoint %s (iteration %d)', path, header.iteration)
    return Checkpoint(params, header.iteration, header.diverged)


def require_spec(params: PolicyParams, spec: PolicySpec) -> PolicyParams:
    """`params` unchanged, provided they were built for `spec`.

    Raises:
        CheckpointError: if the specs differ.
    """
    if params.spec != spec:
        raise CheckpointError(
            f'checkpoint policy {params.spec.model_dump()} does not match config policy {spec.model_dump()}'
        )
    return params
