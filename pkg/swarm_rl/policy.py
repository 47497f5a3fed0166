"""Shared Gaussian policy over truncated action-observation histories.

Every `(previous action, observation)` slot of a history goes through the same two-layer slot network, the slot
embeddings are concatenated oldest first and mapped by a trunk layer to the action mean. The standard deviation is a
state-independent learnable vector. Gradients are computed analytically in float64.
"""

from __future__ import annotations as _annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt

from .exceptions import DimensionError
from .sim import FloatArray, seed_entropy

__all__ = (
    'Activation',
    'PolicySpec',
    'PolicyParams',
    'HistoryWindow',
    'GaussianActionDistribution',
    'HeadGradients',
    'init_params',
    'forward',
    'log_prob',
    'kl_divergence',
    'backward',
    'log_prob_gradient',
    'kl_gradient',
    'push_histories',
)

Activation = Literal['tanh', 'relu']

INITIAL_STD = 0.5
HEAD_INIT_SCALE = 0.01
_LOG_2PI = math.log(2.0 * math.pi)


class PolicySpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    history_length: PositiveInt = 2
    obs_dim: PositiveInt
    action_dim: PositiveInt = 2
    slot_hidden1: PositiveInt = 128
    slot_hidden2: PositiveInt = 16
    trunk_hidden: PositiveInt = 64
    activation: Activation = 'tanh'

    @property
    def slot_dim(self) -> int:
        return self.action_dim + self.obs_dim

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of the parameter blocks in flat-vector order."""
        return [
            ('slot1.weight', (self.slot_dim, self.slot_hidden1)),
            ('slot1.bias', (self.slot_hidden1,)),
            ('slot2.weight', (self.slot_hidden1, self.slot_hidden2)),
            ('slot2.bias', (self.slot_hidden2,)),
            ('trunk.weight', (self.history_length * self.slot_hidden2, self.trunk_hidden)),
            ('trunk.bias', (self.trunk_hidden,)),
            ('head.weight', (self.trunk_hidden, self.action_dim)),
            ('head.bias', (self.action_dim,)),
            ('log_std', (self.action_dim,)),
        ]

    @property
    def n_params(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layer_shapes())


@dataclass(frozen=True)
class PolicyParams:
    """One flat parameter vector shared by every agent of the swarm."""

    spec: PolicySpec
    vector: FloatArray

    def __post_init__(self):
        if self.vector.shape != (self.spec.n_params,):
            raise DimensionError(f'expected {self.spec.n_params} parameters, got shape {self.vector.shape}')

    def layers(self) -> dict[str, FloatArray]:
        """Views into `vector`, keyed by the names of `PolicySpec.layer_shapes`."""
        views: dict[str, FloatArray] = {}
        offset = 0
        for name, shape in self.spec.layer_shapes():
            size = math.prod(shape)
            views[name] = self.vector[offset : offset + size].reshape(shape)
            offset += size
        return views

    @property
    def log_std(self) -> FloatArray:
        return self.vector[-self.spec.action_dim :]

    def with_vector(self, vector: FloatArray) -> PolicyParams:
        return PolicyParams(self.spec, np.asarray(vector, dtype=np.float64).copy())


@dataclass(frozen=True)
class HistoryWindow:
    """The last η `(previous action, observation)` slots, oldest first, zero-filled before the episode start."""

    slots: FloatArray

    @classmethod
    def empty(cls, spec: PolicySpec) -> HistoryWindow:
        return cls(np.zeros((spec.history_length, spec.slot_dim)))

    def push(self, previous_action: FloatArray, observation: FloatArray) -> HistoryWindow:
        slot = np.concatenate([np.asarray(previous_action, dtype=np.float64), np.asarray(observation, np.float64)])
        return HistoryWindow(np.concatenate([self.slots[1:], slot[None, :]]))


def push_histories(histories: FloatArray, previous_actions: FloatArray, observations: FloatArray) -> FloatArray:
    """`HistoryWindow.push` for a (M, η, slot_dim) stack of windows."""
    slots = np.concatenate([previous_actions, observations], axis=1)
    return np.concatenate([histories[:, 1:], slots[:, None, :]], axis=1)


@dataclass(frozen=True)
class GaussianActionDistribution:
    """Diagonal Gaussian, `mean` may carry leading batch dimensions, `log_std` is shared."""

    mean: FloatArray
    log_std: FloatArray

    @property
    def std(self) -> FloatArray:
        return np.exp(self.log_std)

    def log_prob(self, action: FloatArray) -> FloatArray:
        z = (np.asarray(action, dtype=np.float64) - self.mean) / self.std
        k = self.mean.shape[-1]
        return -0.5 * np.sum(z**2, axis=-1) - np.sum(self.log_std) - 0.5 * k * _LOG_2PI

    def kl(self, other: GaussianActionDistribution) -> FloatArray:
        """KL(self || other), closed form."""
        var_ratio_term = (np.exp(2 * self.log_std) + (self.mean - other.mean) ** 2) / np.exp(2 * other.log_std)
        return np.sum(other.log_std - self.log_std + 0.5 * var_ratio_term - 0.5, axis=-1)

    def sample(self, rng: np.random.Generator) -> FloatArray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.mean.shape[-1] * (1.0 + _LOG_2PI))


@dataclass(frozen=True)
class HeadGradients:
    """Gradient of a scalar objective with respect to the distribution outputs."""

    mean: FloatArray
    """(B, action_dim), one row per history of the batch."""
    log_std: FloatArray
    """(action_dim,), already summed over the batch."""


def init_params(spec: PolicySpec, seed: int) -> PolicyParams:
    """Fan-in scaled normal weights, zero biases, `log_std = log(0.5)`.

    The output layer is scaled down further so the initial action mean is close to zero.
    """
    rng = np.random.default_rng(seed_entropy(seed))
    blocks: list[FloatArray] = []
    for name, shape in spec.layer_shapes():
        if name == 'log_std':
            blocks.append(np.full(shape, math.log(INITIAL_STD)))
        elif name.endswith('.bias'):
            blocks.append(np.zeros(shape))
        else:
            weight = rng.standard_normal(shape) / math.sqrt(shape[0])
            if name == 'head.weight':
                weight *= HEAD_INIT_SCALE
            blocks.append(weight.reshape(-1))
    return PolicyParams(spec, np.concatenate([b.reshape(-1) for b in blocks]))


@dataclass
class _Activations:
    inputs: FloatArray
    slot1: FloatArray
    slot2: FloatArray
    concat: FloatArray
    trunk: FloatArray


def _as_batch(spec: PolicySpec, history: HistoryWindow | FloatArray) -> tuple[FloatArray, bool]:
    slots = history.slots if isinstance(history, HistoryWindow) else np.asarray(history, dtype=np.float64)
    single = slots.ndim == 2
    batch = slots[None] if single else slots
    expected = (spec.history_length, spec.slot_dim)
    if batch.ndim != 3 or batch.shape[1:] != expected:
        raise DimensionError(f'expected histories of shape (..., {expected[0]}, {expected[1]}), got {slots.shape}')
    return batch, single


def _activate(spec: PolicySpec, z: FloatArray) -> FloatArray:
    return np.tanh(z) if spec.activation == 'tanh' else np.maximum(z, 0.0)


def _activation_grad(spec: PolicySpec, h: FloatArray) -> FloatArray:
    """Derivative expressed through the activation output."""
    return 1.0 - h**2 if spec.activation == 'tanh' else (h > 0.0).astype(np.float64)


def _forward(params: PolicyParams, batch: FloatArray) -> tuple[FloatArray, _Activations]:
    spec = params.spec
    w = params.layers()
    n = batch.shape[0]
    inputs = batch.reshape(n * spec.history_length, spec.slot_dim)
    slot1 = _activate(spec, inputs @ w['slot1.weight'] + w['slot1.bias'])
    slot2 = _activate(spec, slot1 @ w['slot2.weight'] + w['slot2.bias'])
    concat = slot2.reshape(n, spec.history_length * spec.slot_hidden2)
    trunk = _activate(spec, concat @ w['trunk.weight'] + w['trunk.bias'])
    mean = trunk @ w['head.weight'] + w['head.bias']
    return mean, _Activations(inputs, slot1, slot2, concat, trunk)


def forward(params: PolicyParams, history: HistoryWindow | FloatArray) -> GaussianActionDistribution:
    """Action distribution for one history `(η, slot_dim)` or a batch `(B, η, slot_dim)`."""
    batch, single = _as_batch(params.spec, history)
    mean, _ = _forward(params, batch)
    return GaussianActionDistribution(mean[0] if single else mean, params.log_std.copy())


def log_prob(dist: GaussianActionDistribution, action: FloatArray) -> FloatArray:
    return dist.log_prob(action)


def kl_divergence(dist_old: GaussianActionDistribution, dist_new: GaussianActionDistribution) -> FloatArray:
    return dist_old.kl(dist_new)


def backward(params: PolicyParams, histories: FloatArray, head: HeadGradients) -> FloatArray:
    """Chain `head` back through the network, returning the gradient in flat-vector layout."""
    spec = params.spec
    batch, _ = _as_batch(spec, histories)
    w = params.layers()
    _, acts = _forward(params, batch)
    grad_mean = np.asarray(head.mean, dtype=np.float64).reshape(batch.shape[0], spec.action_dim)

    grads: dict[str, FloatArray] = {
        'head.weight': acts.trunk.T @ grad_mean,
        'head.bias': grad_mean.sum(axis=0),
    }
    grad_z = (grad_mean @ w['head.weight'].T) * _activation_grad(spec, acts.trunk)
    grads['trunk.weight'] = acts.concat.T @ grad_z
    grads['trunk.bias'] = grad_z.sum(axis=0)

    grad_slot2 = (grad_z @ w['trunk.weight'].T).reshape(acts.slot2.shape)
    grad_z = grad_slot2 * _activation_grad(spec, acts.slot2)
    grads['slot2.weight'] = acts.slot1.T @ grad_z
    grads['slot2.bias'] = grad_z.sum(axis=0)

    grad_z = (grad_z @ w['slot2.weight'].T) * _activation_grad(spec, acts.slot1)
    grads['slot1.weight'] = acts.inputs.T @ grad_z
    grads['slot1.bias'] = grad_z.sum(axis=0)
    grads['log_std'] = np.asarray(head.log_std, dtype=np.float64)

    return np.concatenate([grads[name].reshape(-1) for name, _ in spec.layer_shapes()])


def log_prob_gradient(
    params: PolicyParams, histories: FloatArray, actions: FloatArray, weights: FloatArray | None = None
) -> FloatArray:
    """Gradient of `sum_b weights[b] * log_prob(actions[b] | histories[b])`."""
    batch, _ = _as_batch(params.spec, histories)
    actions = np.asarray(actions, dtype=np.float64).reshape(batch.shape[0], params.spec.action_dim)
    weights = np.ones(batch.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    dist = forward(params, batch)
    z = (actions - dist.mean) / dist.std
    head = HeadGradients(
        mean=weights[:, None] * z / dist.std,
        log_std=np.sum(weights[:, None] * (z**2 - 1.0), axis=0),
    )
    return backward(params, batch, head)


def kl_gradient(params: PolicyParams, histories: FloatArray, old: GaussianActionDistribution) -> FloatArray:
    """Gradient of the batch-mean KL(old || pi_params) with respect to `params`."""
    batch, _ = _as_batch(params.spec, histories)
    n = batch.shape[0]
    new = forward(params, batch)
    new_var = np.exp(2 * new.log_std)
    old_mean = np.asarray(old.mean).reshape(n, params.spec.action_dim)
    head = HeadGradients(
        mean=(new.mean - old_mean) / new_var / n,
        log_std=np.mean(1.0 - (np.exp(2 * old.log_std) + (old_mean - new.mean) ** 2) / new_var, axis=0),
    )
    return backward(params, batch, head)
