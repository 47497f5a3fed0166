"""The two cooperative objectives: forming edges between agents and bridging two points with a link."""

from __future__ import annotations as _annotations

import math
from typing import TYPE_CHECKING, Annotated, Literal

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, model_validator

from .exceptions import PlacementError

if TYPE_CHECKING:
    from .sim import FloatArray, WorldState

__all__ = (
    'EdgeParams',
    'LinkParams',
    'EdgeTask',
    'LinkTask',
    'TaskSpec',
    'edge_reward',
    'active_edge_count',
    'spawn_pois',
    'build_comm_graph',
    'shortest_link_length',
    'link_established',
    'link_reward',
    'task_reward',
)

POI_A = 'poi_a'
POI_B = 'poi_b'
MAX_POI_ATTEMPTS = 10_000


class EdgeParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    reward_range: tuple[NonNegativeFloat, NonNegativeFloat] = (0.10, 0.16)
    penalty_range: tuple[NonNegativeFloat, NonNegativeFloat] = (0.0, 0.07)
    penalty_weight: NonNegativeFloat = 5.0

    @model_validator(mode='after')
    def _check_ranges(self) -> EdgeParams:
        for name, (low, high) in ('reward_range', self.reward_range), ('penalty_range', self.penalty_range):
            if low > high:
                raise ValueError(f'{name} lower bound exceeds upper bound')
        if self.penalty_range[1] >= self.reward_range[0]:
            raise ValueError('penalty_range must lie strictly below reward_range')
        return self


class LinkParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    min_separation: PositiveFloat = 0.75
    link_radius: PositiveFloat = 0.2
    """Hop length of the communication graph, the same radius agents communicate over."""
    poi_margin: NonNegativeFloat = 0.05


class EdgeTask(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: Literal['edge'] = 'edge'
    params: EdgeParams = EdgeParams()

    @property
    def n_pois(self) -> int:
        return 0

    def spawn_pois(self, rng: np.random.Generator, arena_width: float, arena_height: float) -> FloatArray:
        return np.zeros((0, 2))


class LinkTask(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    kind: Literal['link'] = 'link'
    params: LinkParams = LinkParams()

    @property
    def n_pois(self) -> int:
        return 2

    def spawn_pois(self, rng: np.random.Generator, arena_width: float, arena_height: float) -> FloatArray:
        return np.stack(spawn_pois(rng, (arena_width, arena_height), self.params))


TaskSpec = Annotated[EdgeTask | LinkTask, Field(discriminator='kind')]


def _upper_pair_distances(world: WorldState) -> FloatArray:
    positions = world.positions
    i, j = np.triu_indices(world.n_agents, k=1)
    delta = positions[j] - positions[i]
    return np.hypot(delta[:, 0], delta[:, 1])


def active_edge_count(world: WorldState, params: EdgeParams) -> int:
    low, high = params.reward_range
    d = _upper_pair_distances(world)
    return int(np.count_nonzero((d >= low) & (d <= high)))


def edge_reward(world: WorldState, params: EdgeParams) -> float:
    """+1 per agent pair in the reward interval, minus `penalty_weight` per pair in the penalty interval.

    Both intervals are closed.
    """
    d = _upper_pair_distances(world)
    low, high = params.penalty_range
    penalised = int(np.count_nonzero((d >= low) & (d <= high)))
    return float(active_edge_count(world, params)) - params.penalty_weight * penalised


def spawn_pois(
    rng: np.random.Generator, arena: tuple[float, float], params: LinkParams
) -> tuple[FloatArray, FloatArray]:
    """Sample two points uniformly inside the arena margin until they are more than `min_separation` apart."""
    width, height = arena
    margin = params.poi_margin
    for _ in range(MAX_POI_ATTEMPTS):
        a = np.array([rng.uniform(margin, width - margin), rng.uniform(margin, height - margin)])
        b = np.array([rng.uniform(margin, width - margin), rng.uniform(margin, height - margin)])
        if math.hypot(*(a - b)) > params.min_separation:
            return a, b
    raise PlacementError(
        f'could not place two points of interest {params.min_separation} m apart after {MAX_POI_ATTEMPTS} attempts'
    )


def build_comm_graph(world: WorldState, link_radius: float) -> nx.Graph:
    """Undirected graph over both POIs and all agents, edges join nodes at most `link_radius` apart.

    Agent nodes are their integer ids, the POIs are `'poi_a'` and `'poi_b'`. Edge weights are Euclidean distances.
    """
    positions: dict[int | str, FloatArray] = {i: world.positions[i] for i in range(world.n_agents)}
    for name, poi in zip((POI_A, POI_B), world.pois):
        positions[name] = poi

    graph = nx.Graph()
    graph.add_nodes_from(positions)
    nodes = list(positions)
    for index, u in enumerate(nodes):
        for v in nodes[index + 1 :]:
            d = math.hypot(*(positions[u] - positions[v]))
            if d <= link_radius:
                graph.add_edge(u, v, weight=d)
    return graph


def shortest_link_length(graph: nx.Graph) -> float | None:
    """Length of the shortest path between the two POIs, `None` when they are not connected."""
    if POI_A not in graph or POI_B not in graph:
        return None
    try:
        return float(nx.dijkstra_path_length(graph, POI_A, POI_B, weight='weight'))
    except nx.NetworkXNoPath:
        return None


def link_established(world: WorldState, params: LinkParams) -> bool:
    return shortest_link_length(build_comm_graph(world, params.link_radius)) is not None


def link_reward(world: WorldState, params: LinkParams) -> float:
    """`d_opt / d_sp` for the shortest active link between the POIs, 0 when there is none."""
    d_sp = shortest_link_length(build_comm_graph(world, params.link_radius))
    if d_sp is None:
        return 0.0
    d_opt = math.hypot(*(world.pois[0] - world.pois[1]))
    # d_sp >= d_opt up to rounding
    return min(1.0, d_opt / d_sp)


def task_reward(world: WorldState, task: EdgeTask | LinkTask) -> float:
    if isinstance(task, EdgeTask):
        return edge_reward(world, task.params)
    return link_reward(world, task.params)
