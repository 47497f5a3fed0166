"""Episode simulation with the shared policy and pooling of all agents' transitions into one batch."""

from __future__ import annotations as _annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .config import RunConfig
from .policy import PolicyParams, forward, push_histories
from .protocols import initial_estimates, observe_swarm, propagate_all
from .sim import FloatArray, WorldState, reset_world, seed_entropy, step_world
from .tasks import task_reward
from .trpo import IntArray, TrajectoryBatch

__all__ = 'EpisodeRecord', 'episode_seed_sequence', 'run_episode', 'collect_rollouts', 'batch_from_episodes'

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeRecord:
    """Everything that happened in one episode, indexed by control step `t` first."""

    states: list[WorldState]
    """World at each step, observations and rewards of step `t` are taken on `states[t]`."""
    observations: FloatArray
    """(T, M, obs_dim)"""
    histories: FloatArray
    """(T, M, η, slot_dim) policy inputs."""
    actions: FloatArray
    """(T, M, action_dim) actions before clamping."""
    rewards: FloatArray
    """(T,) global reward, shared by all agents."""

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def episode_seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    """Independent, reproducible stream for e.g. `(iteration, episode)`."""
    return np.random.SeedSequence(entropy=seed_entropy(master_seed), spawn_key=key)


def run_episode(
    params: PolicyParams,
    config: RunConfig,
    seed_sequence: np.random.SeedSequence,
    *,
    deterministic: bool = False,
    keep_states: bool = False,
) -> EpisodeRecord:
    """Roll the shared policy out for `config.sim.episode_length` steps.

    Each step every agent propagates its shortest-path estimates one round, observes, pushes
    `(previous action, observation)` into its history and acts; the reward is the task reward of the state the
    agents observed.

    Args:
        params: Shared policy parameters.
        config: The run configuration.
        seed_sequence: Source of both the world seed and the action noise.
        deterministic: Act with the distribution mean instead of sampling.
        keep_states: Keep every `WorldState` in the record, needed for replay dumps.
    """
    sim, protocol, task = config.sim, config.protocol, config.task
    spec = params.spec
    world_seed, action_seed = seed_sequence.generate_state(2)
    rng = np.random.default_rng(action_seed)
    world = reset_world(sim, task, int(world_seed))

    steps, m = sim.episode_length, world.n_agents
    estimates = initial_estimates(world)
    histories = np.zeros((m, spec.history_length, spec.slot_dim))
    previous = np.zeros((m, spec.action_dim))

    observations = np.empty((steps, m, spec.obs_dim))
    all_histories = np.empty((steps, m, spec.history_length, spec.slot_dim))
    actions = np.empty((steps, m, spec.action_dim))
    rewards = np.empty(steps)
    states: list[WorldState] = []

    for t in range(steps):
        estimates = propagate_all(world, estimates, protocol)
        obs = observe_swarm(world, estimates, protocol, task)
        histories = push_histories(histories, previous, obs)
        dist = forward(params, histories)
        action = dist.mean if deterministic else dist.sample(rng)

        if keep_states:
            states.append(world)
        observations[t] = obs
        all_histories[t] = histories
        actions[t] = action
        rewards[t] = task_reward(world, task)

        previous = np.clip(action, -1.0, 1.0)
        world = step_world(world, previous, sim)

    return EpisodeRecord(states, observations, all_histories, actions, rewards)


def _sample_episode(
    params: PolicyParams, config: RunConfig, master_seed: int, iteration: int, episode: int
) -> EpisodeRecord:
    record = run_episode(params, config, episode_seed_sequence(master_seed, iteration, episode))
    logger.debug('iteration %d episode %d return %.3f', iteration, episode, record.total_reward)
    return record


def batch_from_episodes(records: list[EpisodeRecord]) -> TrajectoryBatch:
    """Flatten episodes into one batch ordered by episode, then agent, then time."""
    histories: list[FloatArray] = []
    actions: list[FloatArray] = []
    rewards: list[FloatArray] = []
    episode_ids: list[IntArray] = []
    agent_ids: list[IntArray] = []
    timesteps: list[IntArray] = []
    horizon = 0
    for e, record in enumerate(records):
        steps, m = record.actions.shape[:2]
        horizon = max(horizon, steps)
        histories.append(record.histories.swapaxes(0, 1).reshape(m * steps, *record.histories.shape[2:]))
        actions.append(record.actions.swapaxes(0, 1).reshape(m * steps, -1))
        rewards.append(np.tile(record.rewards, m))
        episode_ids.append(np.full(m * steps, e, dtype=np.int64))
        agent_ids.append(np.repeat(np.arange(m, dtype=np.int64), steps))
        timesteps.append(np.tile(np.arange(steps, dtype=np.int64), m))
    return TrajectoryBatch(
        histories=np.concatenate(histories),
        actions=np.concatenate(actions),
        rewards=np.concatenate(rewards),
        episode_ids=np.concatenate(episode_ids),
        agent_ids=np.concatenate(agent_ids),
        timesteps=np.concatenate(timesteps),
        horizon=horizon,
    )


def collect_rollouts(
    params: PolicyParams,
    config: RunConfig,
    *,
    master_seed: int | None = None,
    iteration: int = 0,
    workers: int | None = None,
) -> tuple[TrajectoryBatch, list[EpisodeRecord]]:
    """Run `config.trpo.episodes_per_iteration` sampled episodes and pool their transitions.

    Episode `e` of iteration `i` draws from `episode_seed_sequence(master_seed, i, e)`, so the result is the same
    whether episodes run sequentially or in a process pool.

    Raises:
        PlacementError: from `reset_world`.
    """
    seed = config.master_seed if master_seed is None else master_seed
    workers = config.workers if workers is None else workers
    episodes = range(config.trpo.episodes_per_iteration)
    sample = partial(_sample_episode, params, config, seed, iteration)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(sample, episodes))
    else:
        records = [sample(e) for e in episodes]
    return batch_from_episodes(records), records
