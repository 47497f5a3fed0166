"""Local observations: IR sensors, neighbourhood histograms and shortest-path partitions.

Every function here is a pure function of a `WorldState` snapshot (plus the shortest-path estimate table), so all
agents' observations of one step can be evaluated independently.
"""

from __future__ import annotations as _annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt

from .exceptions import ConfigError, DimensionError
from .sim import TWO_PI, FloatArray, WorldState, pairwise_distances, relative_poses

if TYPE_CHECKING:
    from .tasks import EdgeTask, LinkTask

__all__ = (
    'ObservationMode',
    'UNKNOWN',
    'ProtocolConfig',
    'NeighborSet',
    'CountHistogram',
    'ShortestPathPartition',
    'sense_neighbors',
    'distance_histogram',
    'bearing_histogram',
    'joint_histogram',
    'ir_sensor_readings',
    'initial_estimates',
    'propagate_shortest_path',
    'propagate_all',
    'shortest_path_partition',
    'check_mode',
    'observation_dim',
    'assemble_observation',
    'observe_swarm',
)

IntArray = npt.NDArray[np.int64]
ObservationMode = Literal['sensor', 'd', 'b', '1d', '2d', '2dsp']

UNKNOWN = math.inf
"""Shortest-path estimate of an agent that has not heard of a route to the POI."""

# values within float rounding of a bin edge belong to the bin above it
_BIN_EDGE_RTOL = 64 * float(np.finfo(np.float64).eps)


class ProtocolConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    comm_radius: PositiveFloat = 0.2
    n_distance_bins: PositiveInt = 4
    n_bearing_bins: PositiveInt = 8
    mode: ObservationMode = '2d'
    sp_max_distance: PositiveFloat = 1.5
    n_ir_sensors: NonNegativeInt = 4
    ir_range: PositiveFloat = 0.05
    ir_fov: float = Field(default=math.pi / 2, ge=0.0, le=TWO_PI)


@dataclass(frozen=True)
class NeighborSet:
    """Egocentric relations to all other agents within the communication radius, ordered by agent id."""

    distances: FloatArray
    bearings: FloatArray
    neighbor_ids: IntArray
    n_others: int
    """Number of other agents in the swarm (M - 1), the histogram normaliser."""

    def __len__(self) -> int:
        return int(self.neighbor_ids.shape[0])


@dataclass(frozen=True)
class CountHistogram:
    counts: IntArray
    """Raw counts, flattened row-major."""
    shape: tuple[int, ...]
    n_others: int

    def normalized(self) -> FloatArray:
        """Counts divided by M - 1, the representation fed to the policy."""
        if self.n_others == 0:
            return np.zeros(self.counts.shape)
        return self.counts / self.n_others

    def grid(self) -> IntArray:
        return self.counts.reshape(self.shape)


@dataclass(frozen=True)
class ShortestPathPartition:
    cells: FloatArray
    """(n_distance_bins, n_bearing_bins) encoded values in [0, 1], 0 where nothing is known."""

    @property
    def flat(self) -> FloatArray:
        return self.cells.reshape(-1)


def sense_neighbors(world: WorldState, agent_id: int, config: ProtocolConfig) -> NeighborSet:
    """All other agents at center distance <= `comm_radius`, the boundary is included."""
    if not 0 <= agent_id < world.n_agents:
        raise DimensionError(f'agent_id {agent_id} out of range for {world.n_agents} agents')
    distances, bearings = relative_poses(
        world.positions[agent_id], float(world.orientations[agent_id]), world.positions
    )
    within = distances <= config.comm_radius
    within[agent_id] = False
    ids = np.flatnonzero(within).astype(np.int64)
    return NeighborSet(
        distances=distances[ids], bearings=bearings[ids], neighbor_ids=ids, n_others=world.n_agents - 1
    )


def _bin_index(values: FloatArray, width: float, n_bins: int) -> IntArray:
    scaled = values / width
    nearest = np.rint(scaled)
    on_edge = np.isclose(scaled, nearest, rtol=_BIN_EDGE_RTOL, atol=0.0)
    index = np.where(on_edge, nearest, np.floor(scaled)).astype(np.int64)
    return np.clip(index, 0, n_bins - 1)


def _distance_bins(distances: FloatArray, config: ProtocolConfig) -> IntArray:
    return _bin_index(distances, config.comm_radius / config.n_distance_bins, config.n_distance_bins)


def _bearing_bins(bearings: FloatArray, config: ProtocolConfig) -> IntArray:
    return _bin_index(bearings, TWO_PI / config.n_bearing_bins, config.n_bearing_bins)


def _joint_cells(distances: FloatArray, bearings: FloatArray, config: ProtocolConfig) -> IntArray:
    return _distance_bins(distances, config) * config.n_bearing_bins + _bearing_bins(bearings, config)


def distance_histogram(nbrs: NeighborSet, config: ProtocolConfig) -> CountHistogram:
    """Equal-width bins over [0, comm_radius], half-open except the last one.

    A distance within float rounding of a bin edge counts in the bin above the edge.
    """
    n = config.n_distance_bins
    counts = np.bincount(_distance_bins(nbrs.distances, config), minlength=n).astype(np.int64)
    return CountHistogram(counts=counts, shape=(n,), n_others=nbrs.n_others)


def bearing_histogram(nbrs: NeighborSet, config: ProtocolConfig) -> CountHistogram:
    """Equal-width half-open bins over [0, 2π), bin 0 starts at the agent's heading."""
    n = config.n_bearing_bins
    counts = np.bincount(_bearing_bins(nbrs.bearings, config), minlength=n).astype(np.int64)
    return CountHistogram(counts=counts, shape=(n,), n_others=nbrs.n_others)


def joint_histogram(nbrs: NeighborSet, config: ProtocolConfig) -> CountHistogram:
    """Distance x bearing grid, distance bins are the rows."""
    shape = (config.n_distance_bins, config.n_bearing_bins)
    cells = _joint_cells(nbrs.distances, nbrs.bearings, config)
    counts = np.bincount(cells, minlength=shape[0] * shape[1]).astype(np.int64)
    return CountHistogram(counts=counts, shape=shape, n_others=nbrs.n_others)


def ir_sensor_readings(world: WorldState, agent_id: int, config: ProtocolConfig) -> FloatArray:
    """Proximity readings of rays spread evenly over `ir_fov` around the heading.

    A reading is `1 - min(hit, ir_range) / ir_range` for the nearest wall or agent body hit by the ray, so 0 means
    nothing within range and 1 means contact at the agent's center.
    """
    n = config.n_ir_sensors
    if n == 0:
        return np.zeros(0)
    offsets = np.linspace(-config.ir_fov / 2, config.ir_fov / 2, n) if n > 1 else np.zeros(1)
    angles = world.orientations[agent_id] + offsets
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    origin = world.positions[agent_id]

    with np.errstate(divide='ignore', invalid='ignore'):
        lower = -origin / directions
        upper = (np.array([world.arena_width, world.arena_height]) - origin) / directions
    wall_hits = np.where(directions > 0, upper, np.where(directions < 0, lower, np.inf)).min(axis=1)
    hits = np.maximum(wall_hits, 0.0)

    others = np.delete(world.positions, agent_id, axis=0)
    if others.shape[0]:
        offset = origin - others
        b = directions @ offset.T
        c = np.sum(offset**2, axis=1) - world.agent_radius**2
        disc = b**2 - c
        with np.errstate(invalid='ignore'):
            t = -b - np.sqrt(disc)
        # a ray starting inside another body hits it immediately
        t = np.where(c < 0, 0.0, t)
        t = np.where((disc >= 0) & (t >= 0), t, np.inf)
        hits = np.minimum(hits, t.min(axis=1))

    return 1.0 - np.minimum(hits, config.ir_range) / config.ir_range


def initial_estimates(world: WorldState) -> FloatArray:
    """(K, M) estimate table with every entry unknown."""
    return np.full((world.pois.shape[0], world.n_agents), UNKNOWN)


def propagate_shortest_path(
    world: WorldState, prev: FloatArray, poi: FloatArray, config: ProtocolConfig
) -> FloatArray:
    """One synchronous message round of the distance-to-POI gossip.

    Each agent takes the minimum of its own direct observation of the POI and every neighbour's previous estimate
    plus the hop to that neighbour. `UNKNOWN` is infinity, so it absorbs under `min`.
    """
    prev = np.asarray(prev, dtype=np.float64)
    if prev.shape != (world.n_agents,):
        raise DimensionError(f'expected {world.n_agents} estimates, got shape {prev.shape}')
    hops = pairwise_distances(world.positions)
    linked = hops <= config.comm_radius
    np.fill_diagonal(linked, False)
    relayed = np.where(linked, prev[None, :] + hops, UNKNOWN).min(axis=1, initial=UNKNOWN)

    delta = world.positions - poi
    direct = np.hypot(delta[:, 0], delta[:, 1])
    direct = np.where(direct <= config.comm_radius, direct, UNKNOWN)
    return np.minimum(direct, relayed)


def propagate_all(world: WorldState, estimates: FloatArray, config: ProtocolConfig) -> FloatArray:
    """Run one round for every POI of `world` on the (K, M) estimate table."""
    if estimates.shape[0] == 0:
        return estimates
    return np.stack([propagate_shortest_path(world, prev, poi, config) for prev, poi in zip(estimates, world.pois)])


def shortest_path_partition(
    nbrs: NeighborSet, estimates: FloatArray, config: ProtocolConfig
) -> ShortestPathPartition:
    """Grid holding, per cell, the smallest estimate among neighbours located there.

    Values are encoded as `(cap - min(v, cap)) / cap` with `cap = sp_max_distance`, so larger means a shorter route
    through that cell and 0 means no neighbour with a known estimate is there.
    """
    shape = (config.n_distance_bins, config.n_bearing_bins)
    values = np.full(shape[0] * shape[1], UNKNOWN)
    neighbour_estimates = np.asarray(estimates, dtype=np.float64)[nbrs.neighbor_ids]
    known = np.isfinite(neighbour_estimates)
    cells = _joint_cells(nbrs.distances[known], nbrs.bearings[known], config)
    np.minimum.at(values, cells, neighbour_estimates[known])

    cap = config.sp_max_distance
    encoded = np.where(np.isfinite(values), (cap - np.minimum(values, cap)) / cap, 0.0)
    return ShortestPathPartition(cells=encoded.reshape(shape))


def check_mode(config: ProtocolConfig, task: EdgeTask | LinkTask) -> None:
    if config.mode == '2dsp' and task.n_pois == 0:
        raise ConfigError(f"observation mode '2dsp' needs points of interest, the {task.kind} task has none")


def observation_dim(config: ProtocolConfig, task: EdgeTask | LinkTask) -> int:
    n_d, n_b = config.n_distance_bins, config.n_bearing_bins
    check_mode(config, task)
    features = {
        'sensor': 0,
        'd': n_d,
        'b': n_b,
        '1d': n_d + n_b,
        '2d': n_d * n_b,
        '2dsp': n_d * n_b * (1 + task.n_pois),
    }[config.mode]
    return config.n_ir_sensors + features


def assemble_observation(
    world: WorldState,
    agent_id: int,
    estimates: FloatArray,
    config: ProtocolConfig,
    task: EdgeTask | LinkTask,
) -> FloatArray:
    """IR readings followed by the features of `config.mode`.

    Args:
        world: Current world snapshot.
        agent_id: The observing agent.
        estimates: (K, M) shortest-path estimate table, only read in `'2dsp'` mode.
        config: Protocol settings.
        task: The task, decides how many shortest-path partitions `'2dsp'` adds.
    """
    check_mode(config, task)
    parts = [ir_sensor_readings(world, agent_id, config)]
    mode = config.mode
    if mode != 'sensor':
        nbrs = sense_neighbors(world, agent_id, config)
        if mode in ('d', '1d'):
            parts.append(distance_histogram(nbrs, config).normalized())
        if mode in ('b', '1d'):
            parts.append(bearing_histogram(nbrs, config).normalized())
        if mode in ('2d', '2dsp'):
            parts.append(joint_histogram(nbrs, config).normalized())
        if mode == '2dsp':
            parts.extend(shortest_path_partition(nbrs, table, config).flat for table in estimates)
    return np.concatenate(parts)


def observe_swarm(
    world: WorldState, estimates: FloatArray, config: ProtocolConfig, task: EdgeTask | LinkTask
) -> FloatArray:
    """(M, obs_dim) observations of every agent."""
    return np.stack([assemble_observation(world, i, estimates, config, task) for i in range(world.n_agents)])
