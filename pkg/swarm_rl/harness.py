"""Training loop orchestration, evaluation, replay dumps and observation-model comparisons.

All files of a run live under `RunConfig.output_directory`:

```
config.json            resolved config, every default spelled out
learning_curve.csv     one row per iteration, byte-identical across identical runs
timings.csv            wall-clock seconds per iteration
checkpoints/iter_NNNN.ckpt, checkpoints/final.ckpt
```
"""

from __future__ import annotations as _annotations

import csv
import logging
import math
import time
from collections.abc import Callable, Iterable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, TypeAlias

import numpy as np
from pydantic import BaseModel, ConfigDict

from .checkpoint import require_spec, save_checkpoint
from .config import RunConfig, apply_overrides, write_frozen_config
from .exceptions import ConfigError, DivergenceError
from .policy import PolicyParams, PolicySpec, init_params
from .protocols import ObservationMode
from .rollout import EpisodeRecord, collect_rollouts, episode_seed_sequence, run_episode
from .sim import FloatArray, WorldState
from .tasks import EdgeTask, active_edge_count, link_established, link_reward
from .trpo import compute_returns, estimate_advantages, fit_baseline, trpo_update

__all__ = (
    'LoggingLevel',
    'LogHandler',
    'IterationRecord',
    'TrainingResult',
    'EvaluationMetrics',
    'ReplayHeader',
    'ReplayStep',
    'Replay',
    'ComparisonRow',
    'LEARNING_CURVE_COLUMNS',
    'run_training',
    'evaluate',
    'replay_dump',
    'read_replay',
    'compare_observation_models',
)

logger = logging.getLogger(__name__)

LoggingLevel = Literal['debug', 'info', 'warning', 'error']
LogHandler: TypeAlias = Callable[[LoggingLevel, str], None]
_LEVELS: dict[LoggingLevel, int] = {
    'debug': logging.DEBUG,
    'info': logging.INFO,
    'warning': logging.WARNING,
    'error': logging.ERROR,
}

LEARNING_CURVE_COLUMNS = (
    'iteration',
    'mean_return',
    'std_return',
    'mean_kl',
    'surrogate_improvement',
    'backtracks',
    'accepted',
)
TIMING_COLUMNS = 'iteration', 'seconds'
COMPARISON_COLUMNS = 'mode', 'history_length', 'n_seeds', 'mean_final_return', 'std_final_return'
REPLAY_SCHEMA = 'swarm-rl-replay'
REPLAY_VERSION = 1


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    mean_return: float
    """Undiscounted episode return (sum of step rewards) averaged over the iteration's episodes."""
    std_return: float
    mean_kl: float
    surrogate_improvement: float
    backtracks: int
    accepted: bool
    seconds: float
    """Wall clock, only written to `timings.csv`."""

    def curve_row(self) -> list[object]:
        return [
            self.iteration,
            repr(self.mean_return),
            repr(self.std_return),
            repr(self.mean_kl),
            repr(self.surrogate_improvement),
            self.backtracks,
            int(self.accepted),
        ]


@dataclass(frozen=True)
class TrainingResult:
    params: PolicyParams
    records: list[IterationRecord]
    output_directory: Path
    final_checkpoint: Path


def _emit(log_handler: LogHandler | None, level: LoggingLevel, msg: str) -> None:
    logger.log(_LEVELS[level], msg)
    if log_handler:
        log_handler(level, msg)


@contextmanager
def _csv_rows(path: Path, columns: Sequence[str]) -> Iterator[Callable[[Sequence[object]], None]]:
    """Open `path` for writing and yield a function appending one flushed row."""
    with path.open('w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')

        def write(row: Sequence[object]) -> None:
            writer.writerow(row)
            f.flush()

        write(columns)
        yield write


def _checkpoint_path(out: Path, iteration: int) -> Path:
    return out / 'checkpoints' / f'iter_{iteration:04d}.ckpt'


def _diverge(
    params: PolicyParams, out: Path, iteration: int, what: str, log_handler: LogHandler | None
) -> DivergenceError:
    path = save_checkpoint(params, out / 'checkpoints' / 'diverged.ckpt', iteration=iteration, diverged=True)
    _emit(log_handler, 'error', f'iteration {iteration}: {what}, wrote {path}')
    return DivergenceError(f'training diverged at iteration {iteration}: {what} (checkpoint {path})')


def run_training(config: RunConfig, log_handler: LogHandler | None = None) -> TrainingResult:
    """Train the shared policy for `config.trpo.iterations` iterations.

    Each iteration collects `episodes_per_iteration` episodes, computes discounted returns, fits the linear baseline,
    estimates advantages and applies one `trpo_update`. The initial policy is written as `iter_0000.ckpt`, then every
    `checkpoint_every` iterations and once more as `final.ckpt`.

    Args:
        config: A validated run configuration, nothing is computed for an invalid one.
        log_handler: Optional callback receiving progress messages in addition to the module logger.

    Raises:
        DivergenceError: if episode returns or parameters become non-finite, after writing `diverged.ckpt`.
    """
    out = config.output_directory
    out.mkdir(parents=True, exist_ok=True)
    write_frozen_config(config, out / 'config.json')

    spec = config.policy_spec()
    params = init_params(spec, config.master_seed)
    _emit(log_handler, 'info', f'training {spec.n_params} parameters for {config.trpo.iterations} iterations')
    save_checkpoint(params, _checkpoint_path(out, 0), iteration=0)

    records: list[IterationRecord] = []
    with (
        _csv_rows(out / 'learning_curve.csv', LEARNING_CURVE_COLUMNS) as write_curve,
        _csv_rows(out / 'timings.csv', TIMING_COLUMNS) as write_timing,
    ):
        for iteration in range(config.trpo.iterations):
            start = time.perf_counter()
            batch, episodes = collect_rollouts(params, config, iteration=iteration)
            returns = np.array([episode.total_reward for episode in episodes])
            if not np.all(np.isfinite(returns)):
                raise _diverge(params, out, iteration, 'non-finite episode return', log_handler)

            batch = compute_returns(batch, config.trpo.discount)
            batch = estimate_advantages(batch, fit_baseline(batch))
            params, stats = trpo_update(params, batch, config.trpo)
            if not np.all(np.isfinite(params.vector)):
                raise _diverge(params, out, iteration, 'non-finite policy parameters', log_handler)

            record = IterationRecord(
                iteration=iteration,
                mean_return=float(returns.mean()),
                std_return=float(returns.std()),
                mean_kl=stats.kl,
                surrogate_improvement=stats.improvement,
                backtracks=stats.backtracks,
                accepted=stats.accepted,
                seconds=time.perf_counter() - start,
            )
            records.append(record)
            write_curve(record.curve_row())
            write_timing([iteration, f'{record.seconds:.3f}'])
            _emit(
                log_handler,
                'info',
                f'iteration {iteration}: mean return {record.mean_return:.3f} ± {record.std_return:.3f}, '
                f'kl {record.mean_kl:.2e}, backtracks {record.backtracks}',
            )
            if (iteration + 1) % config.checkpoint_every == 0:
                save_checkpoint(params, _checkpoint_path(out, iteration + 1), iteration=iteration + 1)

    final = save_checkpoint(params, out / 'checkpoints' / 'final.ckpt', iteration=config.trpo.iterations)
    return TrainingResult(params, records, out, final)


@dataclass(frozen=True)
class EvaluationMetrics:
    n_episodes: int
    deterministic: bool
    mean_return: float
    std_return: float
    returns: list[float]
    mean_active_edges: float | None = None
    """Edge task: active agent pairs per step."""
    link_established_fraction: float | None = None
    """Link task: fraction of steps with a path between the points of interest."""
    mean_link_reward: float | None = None


def evaluate(
    params: PolicyParams,
    config: RunConfig,
    n_episodes: int | None = None,
    seed: int | None = None,
    *,
    deterministic: bool = True,
) -> EvaluationMetrics:
    """Run evaluation episodes and report returns plus task-specific metrics.

    `config.sim.n_agents` may differ from the swarm size the policy was trained with, the observation layout does
    not depend on it. Episode `e` draws from `episode_seed_sequence(seed, e)`. `params` is never modified.

    Raises:
        CheckpointError: if `params` was built for a different policy spec than `config` describes.
    """
    require_spec(params, config.policy_spec())
    n_episodes = config.eval_episodes if n_episodes is None else n_episodes
    seed = config.master_seed if seed is None else seed

    returns: list[float] = []
    step_metric: list[float] = []
    link_rewards: list[float] = []
    for e in range(n_episodes):
        episode = run_episode(
            params, config, episode_seed_sequence(seed, e), deterministic=deterministic, keep_states=True
        )
        returns.append(episode.total_reward)
        if isinstance(config.task, EdgeTask):
            step_metric.extend(active_edge_count(state, config.task.params) for state in episode.states)
        else:
            step_metric.extend(float(link_established(state, config.task.params)) for state in episode.states)
            link_rewards.extend(link_reward(state, config.task.params) for state in episode.states)
        logger.debug('evaluation episode %d return %.3f', e, episode.total_reward)

    values = np.array(returns)
    mean_step = float(np.mean(step_metric)) if step_metric else math.nan
    return EvaluationMetrics(
        n_episodes=n_episodes,
        deterministic=deterministic,
        mean_return=float(values.mean()) if n_episodes else math.nan,
        std_return=float(values.std()) if n_episodes else math.nan,
        returns=returns,
        mean_active_edges=mean_step if isinstance(config.task, EdgeTask) else None,
        link_established_fraction=None if isinstance(config.task, EdgeTask) else mean_step,
        mean_link_reward=None if isinstance(config.task, EdgeTask) else float(np.mean(link_rewards or [math.nan])),
    )


class ReplayHeader(BaseModel):
    """First line of a replay dump, every following line is one `ReplayStep`."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    schema_name: Literal['swarm-rl-replay'] = REPLAY_SCHEMA
    version: Literal[1] = REPLAY_VERSION
    task: Literal['edge', 'link']
    episode_seed: int
    deterministic: bool
    n_agents: int
    episode_length: int
    obs_dim: int
    arena: tuple[float, float]
    agent_radius: float
    pois: list[tuple[float, float]]
    policy: PolicySpec


class ReplayStep(BaseModel):
    """State of one agent at control step `t`, with the action it chose and the reward of that state."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    t: int
    agent: int
    position: tuple[float, float]
    orientation: float
    linear_velocity: tuple[float, float]
    angular_velocity: float
    action: list[float]
    """Policy output before clamping to [-1, 1]."""
    reward: float
    observation: list[float]


def _replay_lines(header: ReplayHeader, episode: EpisodeRecord) -> Iterable[str]:
    yield header.model_dump_json()
    for t, state in enumerate(episode.states):
        for i in range(state.n_agents):
            step = ReplayStep(
                t=t,
                agent=i,
                position=(float(state.positions[i, 0]), float(state.positions[i, 1])),
                orientation=float(state.orientations[i]),
                linear_velocity=(float(state.linear_velocities[i, 0]), float(state.linear_velocities[i, 1])),
                angular_velocity=float(state.angular_velocities[i]),
                action=episode.actions[t, i].tolist(),
                reward=float(episode.rewards[t]),
                observation=episode.observations[t, i].tolist(),
            )
            yield step.model_dump_json()


def replay_dump(
    params: PolicyParams, config: RunConfig, episode_seed: int, out_path: Path, *, deterministic: bool = True
) -> Path:
    """Run one episode from `episode_seed_sequence(episode_seed)` and write it as JSON lines.

    The file holds a `ReplayHeader` line followed by `episode_length * n_agents` `ReplayStep` lines, ordered by step
    then agent.

    Raises:
        CheckpointError: if `params` does not match the policy spec of `config`.
    """
    require_spec(params, config.policy_spec())
    episode = run_episode(
        params, config, episode_seed_sequence(episode_seed), deterministic=deterministic, keep_states=True
    )
    first = episode.states[0]
    header = ReplayHeader(
        task=config.task.kind,
        episode_seed=episode_seed,
        deterministic=deterministic,
        n_agents=first.n_agents,
        episode_length=len(episode.states),
        obs_dim=config.obs_dim,
        arena=(first.arena_width, first.arena_height),
        agent_radius=first.agent_radius,
        pois=[(float(x), float(y)) for x, y in first.pois],
        policy=params.spec,
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open('w') as f:
        for line in _replay_lines(header, episode):
            f.write(line + '\n')
    logger.info('Wrote replay of %d steps to %s', header.episode_length, out_path)
    return out_path


@dataclass(frozen=True)
class Replay:
    header: ReplayHeader
    states: list[WorldState]
    actions: FloatArray
    """(T, M, action_dim)"""
    rewards: FloatArray
    """(T,)"""
    observations: FloatArray
    """(T, M, obs_dim)"""


def read_replay(path: Path) -> Replay:
    """Load a replay dump back into world states and per-step arrays."""
    with path.open() as f:
        header = ReplayHeader.model_validate_json(f.readline())
        steps = [ReplayStep.model_validate_json(line) for line in f if line.strip()]

    m, n_steps = header.n_agents, header.episode_length
    steps.sort(key=lambda s: (s.t, s.agent))
    positions = np.array([s.position for s in steps]).reshape(n_steps, m, 2)
    orientations = np.array([s.orientation for s in steps]).reshape(n_steps, m)
    linear = np.array([s.linear_velocity for s in steps]).reshape(n_steps, m, 2)
    angular = np.array([s.angular_velocity for s in steps]).reshape(n_steps, m)
    pois = np.array(header.pois, dtype=np.float64).reshape(-1, 2)
    states = [
        WorldState(
            positions=positions[t],
            orientations=orientations[t],
            linear_velocities=linear[t],
            angular_velocities=angular[t],
            pois=pois,
            time_step=t,
            arena_width=header.arena[0],
            arena_height=header.arena[1],
            agent_radius=header.agent_radius,
        )
        for t in range(n_steps)
    ]
    return Replay(
        header=header,
        states=states,
        actions=np.array([s.action for s in steps]).reshape(n_steps, m, -1),
        rewards=np.array([s.reward for s in steps]).reshape(n_steps, m)[:, 0],
        observations=np.array([s.observation for s in steps]).reshape(n_steps, m, header.obs_dim),
    )


@dataclass(frozen=True)
class ComparisonRow:
    mode: ObservationMode
    history_length: int
    n_seeds: int
    mean_final_return: float
    std_final_return: float


def compare_observation_models(
    config: RunConfig,
    modes: Sequence[ObservationMode],
    history_lengths: Sequence[int],
    seeds: Sequence[int],
    log_handler: LogHandler | None = None,
) -> list[ComparisonRow]:
    """Train every (observation mode, history length) combination once per seed and summarise the final returns.

    Trials run in `<output_directory>/<mode>-eta<η>/seed<seed>`, the summary is written to
    `<output_directory>/comparison.csv`. Every combination is validated before any training starts.

    Raises:
        ConfigError: if a combination is invalid, e.g. `'2dsp'` for the edge task, or there are no iterations to
            report on.
    """
    if config.trpo.iterations == 0:
        raise ConfigError('comparison needs trpo.iterations >= 1')
    if not seeds:
        raise ConfigError('comparison needs at least one seed')
    base = config.output_directory
    trials: dict[tuple[ObservationMode, int], list[RunConfig]] = {}
    for mode in modes:
        for eta in history_lengths:
            trials[mode, eta] = [
                apply_overrides(
                    config,
                    {
                        'protocol.mode': mode,
                        'policy.history_length': eta,
                        'master_seed': seed,
                        'output_directory': base / f'{mode}-eta{eta}' / f'seed{seed}',
                    },
                )
                for seed in seeds
            ]

    rows: list[ComparisonRow] = []
    for (mode, eta), configs in trials.items():
        finals = np.array([run_training(c, log_handler).records[-1].mean_return for c in configs])
        row = ComparisonRow(mode, eta, len(configs), float(finals.mean()), float(finals.std()))
        rows.append(row)
        summary = f'final return {row.mean_final_return:.3f} ± {row.std_final_return:.3f}'
        _emit(log_handler, 'info', f'{mode} η={eta}: {summary}')

    base.mkdir(parents=True, exist_ok=True)
    with _csv_rows(base / 'comparison.csv', COMPARISON_COLUMNS) as write_row:
        for row in rows:
            write_row(
                [row.mode, row.history_length, row.n_seeds, repr(row.mean_final_return), repr(row.std_final_return)]
            )
    return rows
