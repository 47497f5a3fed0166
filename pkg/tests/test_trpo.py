from __future__ import annotations as _annotations

import logging
from dataclasses import replace

import numpy as np
import pytest

from swarm_rl.exceptions import DivergenceError
from swarm_rl.policy import HeadGradients, PolicyParams, PolicySpec, backward, forward, init_params
from swarm_rl.sim import FloatArray
from swarm_rl.trpo import (
    TrajectoryBatch,
    Transition,
    TrpoConfig,
    UpdateStats,
    compute_returns,
    conjugate_gradient,
    estimate_advantages,
    fisher_vector_product,
    fit_baseline,
    mean_kl,
    trpo_update,
)

SPEC = PolicySpec(history_length=2, obs_dim=3, slot_hidden1=6, slot_hidden2=3, trunk_hidden=5)


def _batch(
    rng: np.random.Generator, n: int, spec: PolicySpec = SPEC, horizon: int = 10, **fields: object
) -> TrajectoryBatch:
    batch = TrajectoryBatch(
        histories=rng.standard_normal((n, spec.history_length, spec.slot_dim)),
        actions=rng.standard_normal((n, spec.action_dim)),
        rewards=np.zeros(n),
        episode_ids=np.zeros(n, dtype=np.int64),
        agent_ids=np.arange(n, dtype=np.int64),
        timesteps=rng.integers(0, horizon, size=n),
        horizon=horizon,
    )
    return replace(batch, **fields)


def test_conjugate_gradient_matches_dense_solve():
    rng = np.random.default_rng(0)
    for _ in range(20):
        b = rng.standard_normal((20, 20))
        a = b @ b.T + 20 * np.eye(20)
        g = rng.standard_normal(20)

        def fvp(v: FloatArray) -> FloatArray:
            return a @ v

        x = conjugate_gradient(fvp, g, iters=60, tol=1e-12)
        np.testing.assert_allclose(x, np.linalg.solve(a, g), rtol=0, atol=1e-6)


def test_conjugate_gradient_rejects_negative_curvature():
    with pytest.raises(DivergenceError, match='curvature'):
        conjugate_gradient(lambda v: -v, np.ones(3), iters=10)


def test_from_transitions_orders_by_episode_agent_time():
    transitions = [
        Transition(np.zeros((1, 3)), np.zeros(2), reward=float(10 * e + 5 * a + t), episode_id=e, agent_id=a, t=t)
        for e in (1, 0)
        for a in (1, 0)
        for t in (2, 0, 1)
    ]
    batch = TrajectoryBatch.from_transitions(transitions, horizon=3)
    assert batch.rewards.tolist() == [0, 1, 2, 5, 6, 7, 10, 11, 12, 15, 16, 17]
    assert [(s.start, s.stop) for s in batch.trajectory_slices()] == [(0, 3), (3, 6), (6, 9), (9, 12)]


def test_compute_returns_per_trajectory():
    batch = TrajectoryBatch(
        histories=np.zeros((5, 1, 3)),
        actions=np.zeros((5, 2)),
        rewards=np.array([1.0, 1.0, 1.0, 2.0, 0.0]),
        episode_ids=np.array([0, 0, 0, 0, 0]),
        agent_ids=np.array([0, 0, 0, 1, 1]),
        timesteps=np.array([0, 1, 2, 0, 1]),
        horizon=3,
    )
    assert compute_returns(batch, 0.5).returns == pytest.approx([1.75, 1.5, 1.0, 2.0, 0.0])
    assert compute_returns(batch, 1.0).returns == pytest.approx([3.0, 2.0, 1.0, 2.0, 0.0])


def test_baseline_fits_realisable_returns():
    rng = np.random.default_rng(1)
    batch = _batch(rng, 400)
    obs = batch.histories[:, -1, 2:]
    phase = batch.timesteps / batch.horizon
    true_weights = np.array([0.5, -1.0, 2.0, 3.0, -0.7, 4.0])
    returns = np.column_stack([obs, phase, phase**2, np.ones(400)]) @ true_weights
    baseline = fit_baseline(replace(batch, returns=returns))
    residual = returns - baseline.predict(batch)
    assert float(np.mean(residual**2)) < 1e-6
    np.testing.assert_allclose(baseline.weights, true_weights, atol=1e-3)


def test_advantages_are_normalised():
    rng = np.random.default_rng(2)
    batch = _batch(rng, 300, returns=rng.standard_normal(300) * 4 + 1)
    advantages = estimate_advantages(batch, fit_baseline(batch)).advantages
    assert advantages is not None
    assert float(np.mean(advantages)) == pytest.approx(0.0, abs=1e-12)
    assert float(np.std(advantages)) == pytest.approx(1.0)


def test_degenerate_advantages_warn(caplog: pytest.LogCaptureFixture):
    rng = np.random.default_rng(3)
    batch = _batch(rng, 50, returns=np.full(50, 3.0))
    with caplog.at_level(logging.WARNING):
        advantages = estimate_advantages(batch, fit_baseline(batch)).advantages
    assert advantages is not None
    assert np.abs(advantages).max() < 1e-6
    assert 'degenerate' in caplog.text


def _dense_fisher(params: PolicyParams, histories: FloatArray) -> FloatArray:
    """Fisher matrix of the Gaussian policy: Jacobian outer products plus 2 on the log-std diagonal."""
    spec = params.spec
    n = histories.shape[0]
    std = np.exp(params.log_std)
    fisher = np.zeros((spec.n_params, spec.n_params))
    for b in range(n):
        for k in range(spec.action_dim):
            unit = np.zeros((1, spec.action_dim))
            unit[0, k] = 1.0
            jac = backward(params, histories[b : b + 1], HeadGradients(unit, np.zeros(spec.action_dim)))
            fisher += np.outer(jac, jac) / std[k] ** 2 / n
    for k in range(spec.action_dim):
        index = spec.n_params - spec.action_dim + k
        fisher[index, index] += 2.0
    return fisher


def test_fisher_vector_product_matches_dense_fisher():
    rng = np.random.default_rng(4)
    base = init_params(SPEC, 0)
    params = base.with_vector(base.vector + 0.2 * rng.standard_normal(SPEC.n_params))
    batch = _batch(rng, 8)
    fisher = _dense_fisher(params, batch.histories)
    for _ in range(5):
        v = rng.standard_normal(SPEC.n_params)
        product = fisher_vector_product(params, batch, v, damping=0.0)
        np.testing.assert_allclose(product, fisher @ v, rtol=1e-5, atol=1e-7)
        damped = fisher_vector_product(params, batch, v, damping=0.1)
        np.testing.assert_allclose(damped - product, 0.1 * v, atol=1e-7)
    assert not fisher_vector_product(params, batch, np.zeros(SPEC.n_params), damping=0.1).any()


def test_zero_advantages_reject_update(caplog: pytest.LogCaptureFixture):
    rng = np.random.default_rng(5)
    params = init_params(SPEC, 1)
    batch = _batch(rng, 20, advantages=np.zeros(20))
    with caplog.at_level(logging.WARNING):
        new, stats = trpo_update(params, batch, TrpoConfig())
    assert new is params
    assert not stats.accepted
    assert stats.diagnostic == 'zero surrogate gradient'
    assert stats.improvement == 0.0
    assert 'TRPO update rejected' in caplog.text


def test_bandit_converges_to_optimum():
    """One-step episodes with reward `-|a - a*|^2`, the optimum is a mean action equal to `a*`."""
    spec = PolicySpec(history_length=1, obs_dim=1, slot_hidden1=4, slot_hidden2=2, trunk_hidden=4)
    config = TrpoConfig(kl_bound=0.01)
    target = np.array([0.3, -0.2])
    rng = np.random.default_rng(6)
    params = init_params(spec, 0)
    n = 256
    histories = np.zeros((n, 1, spec.slot_dim))

    for _ in range(50):
        actions = forward(params, histories).sample(rng)
        batch = TrajectoryBatch(
            histories=histories,
            actions=actions,
            rewards=-np.sum((actions - target) ** 2, axis=1),
            episode_ids=np.arange(n),
            agent_ids=np.zeros(n, dtype=np.int64),
            timesteps=np.zeros(n, dtype=np.int64),
            horizon=1,
        )
        batch = compute_returns(batch, config.discount)
        batch = estimate_advantages(batch, fit_baseline(batch))
        new, stats = trpo_update(params, batch, config)
        if stats.accepted:
            assert mean_kl(params, new, batch) <= 1.1 * config.kl_bound
            assert stats.improvement > 0.0
        params = new

    mean = forward(params, histories[:1]).mean[0]
    assert np.abs(mean - target).max() < 0.1


def test_pooled_agents_update_like_one_agent_stream():
    rng = np.random.default_rng(21)
    n_agents, horizon = 3, 6
    rewards = rng.uniform(0.0, 2.0, size=horizon)
    steps = [
        (agent, t, rng.standard_normal((SPEC.history_length, SPEC.slot_dim)), rng.standard_normal(2))
        for agent in range(n_agents)
        for t in range(horizon)
    ]
    pooled = TrajectoryBatch.from_transitions(
        [Transition(h, a, float(rewards[t]), episode_id=0, agent_id=agent, t=t) for agent, t, h, a in steps], horizon
    )
    # every agent's trajectory replayed as its own single-agent episode, in the same order
    stream = TrajectoryBatch.from_transitions(
        [Transition(h, a, float(rewards[t]), episode_id=agent, agent_id=0, t=t) for agent, t, h, a in steps], horizon
    )

    params = init_params(SPEC, 2)
    results: list[tuple[PolicyParams, UpdateStats]] = []
    for batch in (pooled, stream):
        batch = compute_returns(batch, 0.99)
        batch = estimate_advantages(batch, fit_baseline(batch))
        results.append(trpo_update(params, batch, TrpoConfig()))

    (pooled_params, pooled_stats), (stream_params, stream_stats) = results
    np.testing.assert_array_equal(pooled_params.vector, stream_params.vector)
    assert pooled_stats == stream_stats
