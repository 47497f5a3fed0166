"""Multi-agent TRPO on pooled transitions.

All agents share one parameter vector and receive the same global reward, their transitions are pooled and treated
as if one agent had produced them. The update maximises the importance-weighted advantage surrogate inside a mean-KL
trust region, with the natural-gradient direction found by conjugate gradient on finite-difference Fisher-vector
products.
"""

from __future__ import annotations as _annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.signal
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt

from .exceptions import DivergenceError
from .policy import GaussianActionDistribution, PolicyParams, forward, kl_gradient, log_prob_gradient
from .sim import FloatArray

__all__ = (
    'TrpoConfig',
    'Transition',
    'TrajectoryBatch',
    'BaselineModel',
    'UpdateStats',
    'compute_returns',
    'fit_baseline',
    'estimate_advantages',
    'surrogate_loss',
    'surrogate_gradient',
    'mean_kl',
    'conjugate_gradient',
    'fisher_vector_product',
    'trpo_update',
)

logger = logging.getLogger(__name__)

IntArray = npt.NDArray[np.int64]

BASELINE_RIDGE = 1e-6
FVP_EPS = 1e-5
DEGENERATE_ADVANTAGE_STD = 1e-6


class TrpoConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    kl_bound: PositiveFloat = 0.01
    discount: float = Field(default=0.99, gt=0.0, le=1.0)
    cg_iterations: PositiveInt = 10
    cg_damping: PositiveFloat = 0.1
    cg_tolerance: PositiveFloat = 1e-10
    backtrack_ratio: float = Field(default=0.8, gt=0.0, lt=1.0)
    max_backtracks: NonNegativeInt = 15
    episodes_per_iteration: PositiveInt = 8
    iterations: NonNegativeInt = 300


@dataclass(frozen=True)
class Transition:
    history: FloatArray
    action: FloatArray
    """Sampled action before clamping."""
    reward: float
    episode_id: int
    agent_id: int
    t: int


@dataclass(frozen=True)
class TrajectoryBatch:
    """Pooled transitions stored column-wise, grouped by (episode, agent) and time-ordered inside each group."""

    histories: FloatArray
    actions: FloatArray
    rewards: FloatArray
    episode_ids: IntArray
    agent_ids: IntArray
    timesteps: IntArray
    horizon: int
    """Episode length T, used to scale the baseline's time features."""
    returns: FloatArray | None = None
    advantages: FloatArray | None = None

    def __len__(self) -> int:
        return int(self.rewards.shape[0])

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], horizon: int) -> TrajectoryBatch:
        ordered = sorted(transitions, key=lambda tr: (tr.episode_id, tr.agent_id, tr.t))
        return cls(
            histories=np.stack([tr.history for tr in ordered]),
            actions=np.stack([np.asarray(tr.action, dtype=np.float64) for tr in ordered]),
            rewards=np.array([tr.reward for tr in ordered], dtype=np.float64),
            episode_ids=np.array([tr.episode_id for tr in ordered], dtype=np.int64),
            agent_ids=np.array([tr.agent_id for tr in ordered], dtype=np.int64),
            timesteps=np.array([tr.t for tr in ordered], dtype=np.int64),
            horizon=horizon,
        )

    def trajectory_slices(self) -> list[slice]:
        if len(self) == 0:
            return []
        change = (np.diff(self.episode_ids) != 0) | (np.diff(self.agent_ids) != 0)
        starts = np.concatenate([[0], np.flatnonzero(change) + 1, [len(self)]])
        return [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]


@dataclass(frozen=True)
class BaselineModel:
    """Linear value predictor on `[latest observation, t/T, (t/T)^2, 1]`."""

    weights: FloatArray

    def predict(self, batch: TrajectoryBatch) -> FloatArray:
        return _baseline_features(batch) @ self.weights


@dataclass(frozen=True)
class UpdateStats:
    surrogate_before: float
    surrogate_after: float
    kl: float
    step_norm: float
    backtracks: int
    accepted: bool
    diagnostic: str | None = None

    @property
    def improvement(self) -> float:
        return self.surrogate_after - self.surrogate_before


def compute_returns(batch: TrajectoryBatch, discount: float) -> TrajectoryBatch:
    """Discounted returns `G_t = r_t + discount * G_{t+1}` inside every (episode, agent) trajectory."""
    returns = np.empty_like(batch.rewards)
    for part in batch.trajectory_slices():
        returns[part] = _discount_cumsum(batch.rewards[part], discount)
    return replace(batch, returns=returns)


def _discount_cumsum(x: FloatArray, discount: float) -> FloatArray:
    return scipy.signal.lfilter([1.0], [1.0, -discount], x[::-1], axis=0)[::-1]


def _baseline_features(batch: TrajectoryBatch) -> FloatArray:
    action_dim = batch.actions.shape[1]
    obs = batch.histories[:, -1, action_dim:]
    phase = batch.timesteps.astype(np.float64) / batch.horizon
    return np.concatenate([obs, phase[:, None], phase[:, None] ** 2, np.ones((len(batch), 1))], axis=1)


def fit_baseline(batch: TrajectoryBatch) -> BaselineModel:
    """Ridge least squares of the returns on the baseline features, the bias column is not penalised."""
    if batch.returns is None:
        raise ValueError('returns must be computed before fitting the baseline')
    if len(batch) == 0:
        raise ValueError('cannot fit a baseline on an empty batch')
    features = _baseline_features(batch)
    penalty = np.full(features.shape[1], BASELINE_RIDGE)
    penalty[-1] = 0.0
    gram = features.T @ features + np.diag(penalty)
    try:
        weights = scipy.linalg.solve(gram, features.T @ batch.returns, assume_a='pos')
    except np.linalg.LinAlgError:
        weights = np.linalg.lstsq(features, batch.returns, rcond=None)[0]
    return BaselineModel(np.asarray(weights, dtype=np.float64))


def estimate_advantages(batch: TrajectoryBatch, baseline: BaselineModel) -> TrajectoryBatch:
    """Returns minus baseline, normalised to zero mean and unit standard deviation over the batch."""
    if batch.returns is None:
        raise ValueError('returns must be computed before estimating advantages')
    advantages = batch.returns - baseline.predict(batch)
    std = float(np.std(advantages))
    if std < DEGENERATE_ADVANTAGE_STD:
        logger.warning('Advantage standard deviation %.3g is degenerate, skipping normalisation', std)
        return replace(batch, advantages=advantages)
    return replace(batch, advantages=(advantages - advantages.mean()) / std)


def _require_advantages(batch: TrajectoryBatch) -> FloatArray:
    if batch.advantages is None:
        raise ValueError('advantages must be estimated first')
    return batch.advantages


def surrogate_loss(params: PolicyParams, params_old: PolicyParams, batch: TrajectoryBatch) -> float:
    """Mean of `exp(logp_new - logp_old) * advantage`, to be maximised."""
    advantages = _require_advantages(batch)
    old_logp = forward(params_old, batch.histories).log_prob(batch.actions)
    new_logp = forward(params, batch.histories).log_prob(batch.actions)
    return float(np.mean(np.exp(new_logp - old_logp) * advantages))


def surrogate_gradient(params: PolicyParams, params_old: PolicyParams, batch: TrajectoryBatch) -> FloatArray:
    advantages = _require_advantages(batch)
    old_logp = forward(params_old, batch.histories).log_prob(batch.actions)
    new_logp = forward(params, batch.histories).log_prob(batch.actions)
    weights = np.exp(new_logp - old_logp) * advantages / len(batch)
    return log_prob_gradient(params, batch.histories, batch.actions, weights)


def mean_kl(params_old: PolicyParams, params: PolicyParams, batch: TrajectoryBatch) -> float:
    old = forward(params_old, batch.histories)
    return float(np.mean(old.kl(forward(params, batch.histories))))


def conjugate_gradient(
    fvp: Callable[[FloatArray], FloatArray], g: FloatArray, iters: int, tol: float = 1e-10
) -> FloatArray:
    """Approximately solve `fvp(x) = g` for a symmetric positive definite operator.

    Raises:
        DivergenceError: on non-finite values or a non-positive curvature direction.
    """
    x = np.zeros_like(g)
    r = g.copy()
    p = g.copy()
    r_dot_r = float(r @ r)
    for i in range(iters):
        if math.sqrt(r_dot_r) <= tol:
            break
        z = fvp(p)
        curvature = float(p @ z)
        if not math.isfinite(curvature) or curvature <= 0.0:
            raise DivergenceError(f'conjugate gradient met curvature {curvature} at iteration {i}')
        alpha = r_dot_r / curvature
        x += alpha * p
        r -= alpha * z
        new_r_dot_r = float(r @ r)
        p = r + (new_r_dot_r / r_dot_r) * p
        r_dot_r = new_r_dot_r
        logger.debug('cg iteration %d residual %.3e', i, math.sqrt(r_dot_r))
    if not np.all(np.isfinite(x)):
        raise DivergenceError('conjugate gradient produced non-finite values')
    return x


def fisher_vector_product(
    params: PolicyParams,
    batch: TrajectoryBatch,
    v: FloatArray,
    damping: float,
    old: GaussianActionDistribution | None = None,
) -> FloatArray:
    """`H v + damping * v` with H the Hessian of the mean KL(pi_params || pi) at `params`.

    H v is a central difference of analytic KL gradients, the probe length is `FVP_EPS` whatever the norm of `v`.

    Args:
        params: The current (old) policy parameters.
        batch: Histories the KL is averaged over.
        v: Direction in parameter space.
        damping: Tikhonov damping added to the product.
        old: Precomputed distribution of `params` on `batch.histories`.
    """
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(v)
    if old is None:
        old = forward(params, batch.histories)
    eps = FVP_EPS / norm
    plus = kl_gradient(params.with_vector(params.vector + eps * v), batch.histories, old)
    minus = kl_gradient(params.with_vector(params.vector - eps * v), batch.histories, old)
    product = (plus - minus) / (2 * eps) + damping * v
    if not np.all(np.isfinite(product)):
        raise DivergenceError('Fisher-vector product produced non-finite values')
    return product


def trpo_update(params: PolicyParams, batch: TrajectoryBatch, config: TrpoConfig) -> tuple[PolicyParams, UpdateStats]:
    """One KL-constrained natural-gradient step with backtracking line search.

    Numerical trouble never raises: the unchanged parameters are returned with `accepted=False` and a diagnostic.
    """
    advantages = _require_advantages(batch)
    old = forward(params, batch.histories)
    old_logp = old.log_prob(batch.actions)

    def surrogate(candidate: PolicyParams) -> tuple[float, float]:
        new = forward(candidate, batch.histories)
        value = float(np.mean(np.exp(new.log_prob(batch.actions) - old_logp) * advantages))
        return value, float(np.mean(old.kl(new)))

    before = float(np.mean(advantages))

    def rejected(diagnostic: str, step_norm: float = 0.0, backtracks: int = 0) -> tuple[PolicyParams, UpdateStats]:
        logger.warning('TRPO update rejected: %s', diagnostic)
        stats = UpdateStats(before, before, 0.0, step_norm, backtracks, accepted=False, diagnostic=diagnostic)
        return params, stats

    g = log_prob_gradient(params, batch.histories, batch.actions, advantages / len(batch))
    if not np.all(np.isfinite(g)):
        return rejected('non-finite surrogate gradient')
    if not np.any(g):
        return rejected('zero surrogate gradient')

    def fvp(v: FloatArray) -> FloatArray:
        return fisher_vector_product(params, batch, v, config.cg_damping, old=old)

    try:
        direction = conjugate_gradient(fvp, g, config.cg_iterations, config.cg_tolerance)
        curvature = float(direction @ fvp(direction))
    except DivergenceError as exc:
        return rejected(str(exc))
    if not math.isfinite(curvature) or curvature <= 0.0:
        return rejected(f'non-positive curvature {curvature}')

    full_step = math.sqrt(2.0 * config.kl_bound / curvature) * direction
    for k in range(config.max_backtracks + 1):
        step = config.backtrack_ratio**k * full_step
        candidate = params.with_vector(params.vector + step)
        after, kl = surrogate(candidate)
        logger.debug('line search step %d: surrogate %.6g kl %.3g', k, after, kl)
        if math.isfinite(after) and math.isfinite(kl) and after > before and kl <= config.kl_bound:
            step_norm = float(np.linalg.norm(step))
            return candidate, UpdateStats(before, after, kl, step_norm, k, accepted=True)

    return rejected('line search found no improving step inside the trust region', backtracks=config.max_backtracks)
