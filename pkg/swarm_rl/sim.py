"""Deterministic 2D simulation of differential-drive disc robots in a walled arena.

All operations are pure: they take a `WorldState` and return a new one, so separate worlds can be
stepped in parallel without sharing anything.
"""

from __future__ import annotations as _annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Protocol

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, PositiveFloat, PositiveInt, model_validator

from .exceptions import DimensionError, PlacementError

if TYPE_CHECKING:
    from .tasks import TaskSpec

__all__ = (
    'FloatArray',
    'SimConfig',
    'AgentState',
    'WorldState',
    'MotorAction',
    'reset_world',
    'step_world',
    'resolve_collisions',
    'relative_pose',
    'relative_poses',
    'pairwise_distances',
    'kinetic_energy',
    'wrap_angle',
    'seed_entropy',
)

FloatArray = npt.NDArray[np.float64]

TWO_PI = 2.0 * math.pi
PENETRATION_TOLERANCE = 1e-6
SPAWN_CLEARANCE = 0.005
MAX_PLACEMENT_ATTEMPTS = 10_000
MAX_COLLISION_PASSES = 64
SEPARATION_SLOP = 1e-6


class SimConfig(BaseModel):
    """Physical constants of the arena and the robots, SI units throughout."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    arena_width: PositiveFloat = 1.0
    arena_height: PositiveFloat = 1.0
    n_agents: PositiveInt = 10
    episode_length: PositiveInt = 500
    agent_radius: PositiveFloat = 0.02
    agent_mass: PositiveFloat = 0.05
    moment_of_inertia: PositiveFloat = 1e-5
    wheel_offset: PositiveFloat = 0.015
    max_force: PositiveFloat = 0.05
    linear_damping: PositiveFloat = 5.0
    angular_damping: PositiveFloat = 5.0
    control_dt: PositiveFloat = 0.1
    physics_substeps: PositiveInt = 10

    @model_validator(mode='after')
    def _check_radius(self) -> SimConfig:
        if self.agent_radius >= min(self.arena_width, self.arena_height) / 4:
            raise ValueError('agent_radius must be smaller than a quarter of the shorter arena side')
        return self

    @property
    def substep_dt(self) -> float:
        return self.control_dt / self.physics_substeps

    @property
    def arena_diagonal(self) -> float:
        return math.hypot(self.arena_width, self.arena_height)


@dataclass(frozen=True)
class AgentState:
    position: FloatArray
    orientation: float
    linear_velocity: FloatArray
    angular_velocity: float


@dataclass(frozen=True)
class WorldState:
    """Global swarm state, agent quantities are stored as stacked arrays indexed by agent id."""

    positions: FloatArray
    """(M, 2) agent centers."""
    orientations: FloatArray
    """(M,) headings in [0, 2π)."""
    linear_velocities: FloatArray
    angular_velocities: FloatArray
    pois: FloatArray
    """(K, 2) points of interest, K = 0 for the edge task and 2 for the link task."""
    time_step: int = 0
    arena_width: float = 1.0
    arena_height: float = 1.0
    agent_radius: float = 0.02

    @property
    def n_agents(self) -> int:
        return int(self.positions.shape[0])

    def agent(self, agent_id: int) -> AgentState:
        return AgentState(
            position=self.positions[agent_id].copy(),
            orientation=float(self.orientations[agent_id]),
            linear_velocity=self.linear_velocities[agent_id].copy(),
            angular_velocity=float(self.angular_velocities[agent_id]),
        )

    @classmethod
    def from_agents(
        cls,
        agents: Sequence[AgentState],
        pois: FloatArray | None = None,
        *,
        time_step: int = 0,
        arena: tuple[float, float] = (1.0, 1.0),
        agent_radius: float = 0.02,
    ) -> WorldState:
        return cls(
            positions=np.array([a.position for a in agents], dtype=np.float64).reshape(-1, 2),
            orientations=wrap_angle(np.array([a.orientation for a in agents], dtype=np.float64)),
            linear_velocities=np.array([a.linear_velocity for a in agents], dtype=np.float64).reshape(-1, 2),
            angular_velocities=np.array([a.angular_velocity for a in agents], dtype=np.float64),
            pois=np.zeros((0, 2)) if pois is None else np.asarray(pois, dtype=np.float64).reshape(-1, 2),
            time_step=time_step,
            arena_width=arena[0],
            arena_height=arena[1],
            agent_radius=agent_radius,
        )


@dataclass(frozen=True)
class MotorAction:
    """Normalised left/right motor command, scaled by `SimConfig.max_force` when applied."""

    left_force: float
    right_force: float

    def clamped(self) -> MotorAction:
        return MotorAction(min(max(self.left_force, -1.0), 1.0), min(max(self.right_force, -1.0), 1.0))


class _PoiSpawner(Protocol):
    def spawn_pois(self, rng: np.random.Generator, arena_width: float, arena_height: float) -> FloatArray: ...


def wrap_angle(angle: FloatArray) -> FloatArray:
    """Reduce angles to [0, 2π); values rounding up to 2π map to 0."""
    wrapped = np.mod(angle, TWO_PI)
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


def seed_entropy(seed: int) -> int | list[int]:
    """Non-negative RNG entropy for any integer seed, non-negative seeds pass through unchanged."""
    return seed if seed >= 0 else [-seed, 1]


def reset_world(config: SimConfig, task: TaskSpec | _PoiSpawner, seed: int) -> WorldState:
    """Place `config.n_agents` agents uniformly at random without overlap and spawn the task's POIs.

    Raises:
        PlacementError: if rejection sampling needs more than 10,000 attempts.
    """
    rng = np.random.default_rng(seed_entropy(seed))
    r = config.agent_radius
    clearance = 2 * r + SPAWN_CLEARANCE
    placed: list[FloatArray] = []
    attempts = 0
    while len(placed) < config.n_agents:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise PlacementError(
                f'could not place {config.n_agents} agents in a {config.arena_width}x{config.arena_height} arena '
                f'after {MAX_PLACEMENT_ATTEMPTS} attempts'
            )
        candidate = np.array([rng.uniform(r, config.arena_width - r), rng.uniform(r, config.arena_height - r)])
        if all(math.hypot(*(candidate - other)) >= clearance for other in placed):
            placed.append(candidate)

    m = config.n_agents
    orientations = wrap_angle(rng.uniform(0.0, TWO_PI, size=m))
    pois = task.spawn_pois(rng, config.arena_width, config.arena_height)
    return WorldState(
        positions=np.array(placed, dtype=np.float64),
        orientations=orientations,
        linear_velocities=np.zeros((m, 2)),
        angular_velocities=np.zeros(m),
        pois=pois,
        time_step=0,
        arena_width=config.arena_width,
        arena_height=config.arena_height,
        agent_radius=config.agent_radius,
    )


def step_world(world: WorldState, actions: Sequence[MotorAction] | FloatArray, config: SimConfig) -> WorldState:
    """Advance the world by one control step of `config.physics_substeps` semi-implicit Euler substeps."""
    forces = _action_array(actions, world.n_agents) * config.max_force
    thrust = forces.sum(axis=1)
    torque = (forces[:, 1] - forces[:, 0]) * config.wheel_offset

    dt = config.substep_dt
    linear_decay = math.exp(-config.linear_damping * dt)
    angular_decay = math.exp(-config.angular_damping * dt)
    linear_accel = thrust / config.agent_mass
    angular_accel = torque / config.moment_of_inertia

    positions = world.positions.copy()
    orientations = world.orientations.copy()
    velocities = world.linear_velocities.copy()
    omegas = world.angular_velocities.copy()
    for _ in range(config.physics_substeps):
        heading = np.stack([np.cos(orientations), np.sin(orientations)], axis=1)
        velocities = (velocities + heading * (linear_accel * dt)[:, None]) * linear_decay
        omegas = (omegas + angular_accel * dt) * angular_decay
        positions = positions + velocities * dt
        orientations = wrap_angle(orientations + omegas * dt)
        positions, velocities = _resolve_contacts(positions, velocities, config)

    return replace(
        world,
        positions=positions,
        orientations=orientations,
        linear_velocities=velocities,
        angular_velocities=omegas,
        time_step=world.time_step + 1,
    )


def resolve_collisions(world: WorldState, config: SimConfig) -> WorldState:
    positions, velocities = _resolve_contacts(world.positions, world.linear_velocities, config)
    return replace(world, positions=positions, linear_velocities=velocities)


def relative_pose(observer: AgentState, target: FloatArray | Sequence[float]) -> tuple[float, float]:
    """Distance and egocentric bearing from `observer` to `target`.

    A target on top of the observer gets distance 0 and bearing 0.
    """
    dx = float(target[0]) - float(observer.position[0])
    dy = float(target[1]) - float(observer.position[1])
    distance = math.hypot(dx, dy)
    if distance == 0.0:
        return 0.0, 0.0
    return distance, float(wrap_angle(np.float64(math.atan2(dy, dx) - observer.orientation)))


def relative_poses(origin: FloatArray, orientation: float, targets: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Vectorised `relative_pose` from one pose to a stack of (N, 2) targets."""
    delta = targets - origin
    distances = np.hypot(delta[:, 0], delta[:, 1])
    bearings = wrap_angle(np.arctan2(delta[:, 1], delta[:, 0]) - orientation)
    return distances, np.where(distances == 0.0, 0.0, bearings)


def pairwise_distances(positions: FloatArray) -> FloatArray:
    delta = positions[None, :, :] - positions[:, None, :]
    return np.hypot(delta[..., 0], delta[..., 1])


def kinetic_energy(world: WorldState, config: SimConfig) -> float:
    translational = 0.5 * config.agent_mass * float(np.sum(world.linear_velocities**2))
    rotational = 0.5 * config.moment_of_inertia * float(np.sum(world.angular_velocities**2))
    return translational + rotational


def _action_array(actions: Sequence[MotorAction] | FloatArray, n_agents: int) -> FloatArray:
    if isinstance(actions, np.ndarray):
        array = np.asarray(actions, dtype=np.float64)
    else:
        array = np.array([[a.left_force, a.right_force] for a in actions], dtype=np.float64).reshape(-1, 2)
    if array.shape != (n_agents, 2):
        raise DimensionError(f'expected actions of shape ({n_agents}, 2), got {array.shape}')
    return np.clip(array, -1.0, 1.0)


def _resolve_contacts(
    positions: FloatArray, velocities: FloatArray, config: SimConfig
) -> tuple[FloatArray, FloatArray]:
    r = config.agent_radius
    contact = 2 * r
    lower = np.array([r, r])
    upper = np.array([config.arena_width - r, config.arena_height - r])
    positions = np.clip(positions, lower, upper)
    velocities = velocities.copy()

    for _ in range(MAX_COLLISION_PASSES):
        penetration = np.triu(contact - pairwise_distances(positions), k=1)
        if float(penetration.max(initial=0.0)) < PENETRATION_TOLERANCE:
            break
        for i, j in zip(*np.nonzero(penetration > 0.0)):
            normal = _separate_pair(positions, int(i), int(j), contact + SEPARATION_SLOP, lower, upper)
            if normal is None:
                continue
            closing = float(np.dot(velocities[j] - velocities[i], normal))
            if closing < 0.0:
                impulse = 0.5 * closing * normal
                velocities[i] += impulse
                velocities[j] -= impulse

    velocities[(positions <= lower) & (velocities < 0.0)] = 0.0
    velocities[(positions >= upper) & (velocities > 0.0)] = 0.0
    return positions, velocities


def _separate_pair(
    positions: FloatArray, i: int, j: int, target: float, lower: FloatArray, upper: FloatArray
) -> FloatArray | None:
    """Push agents `i` and `j` apart to `target` in place, returning the initial contact normal.

    Each agent takes half of the gap and stays inside the walls. A wall-pinned agent hands the
    part it could not take to its partner.
    """
    contact_normal = _contact_normal(positions[j] - positions[i])
    gap = target - math.hypot(*(positions[j] - positions[i]))
    if gap <= 0.0:
        return None
    positions[i] = np.clip(positions[i] - 0.5 * gap * contact_normal, lower, upper)
    positions[j] = np.clip(positions[j] + 0.5 * gap * contact_normal, lower, upper)
    for mover, sign in ((j, 1.0), (i, -1.0)):
        delta = positions[j] - positions[i]
        gap = target - math.hypot(*delta)
        if gap <= 0.0:
            break
        normal = _contact_normal(delta)
        positions[mover] = np.clip(positions[mover] + sign * gap * normal, lower, upper)
    return contact_normal


def _contact_normal(delta: FloatArray) -> FloatArray:
    distance = math.hypot(delta[0], delta[1])
    # coincident centers are separated along +x
    return delta / distance if distance > 0.0 else np.array([1.0, 0.0])
