"""Batch normalization: vanilla, categorical-conditional (CCBN) and sandwich (SaBN).

All three variants share the same normalization step. Statistics are computed
per channel over the batch and time axes and are shared across groups; the
variants differ only in the affine transform applied afterwards.

Running statistics follow ``running = momentum * running + (1 - momentum) * batch``
and are only updated in train mode. The running variance uses the unbiased
batch variance.
"""
from dataclasses import dataclass, field

import numpy as np

from .._validation import check_axis, check_group_index, check_tensor
from ..exceptions import ContractError

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, n_channels, dtype=np.float64, **kwargs):
        return cls(
            gamma=np.ones(n_channels, dtype),
            beta=np.zeros(n_channels, dtype),
            running_mean=np.zeros(n_channels, dtype),
            running_var=np.ones(n_channels, dtype),
            **kwargs,
        )

    @property
    def n_channels(self):
        return self.gamma.shape[0]


@dataclass
class CategoricalBNState:
    """Per-group affine pairs over shared statistics; ``gamma_g``/``beta_g`` are ``[G, C]``."""

    gamma_g: np.ndarray
    beta_g: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, n_channels, n_groups, dtype=np.float64, **kwargs):
        if n_groups < 1:
            raise ContractError(f"number of groups must be >= 1, got {n_groups}")
        return cls(
            gamma_g=np.ones((n_groups, n_channels), dtype),
            beta_g=np.zeros((n_groups, n_channels), dtype),
            running_mean=np.zeros(n_channels, dtype),
            running_var=np.ones(n_channels, dtype),
            **kwargs,
        )

    @property
    def n_groups(self):
        return self.gamma_g.shape[0]

    @property
    def n_channels(self):
        return self.gamma_g.shape[1]


@dataclass
class SandwichBNState:
    """A shared affine pair cascaded with ``G`` independent per-group pairs."""

    gamma_sa: np.ndarray
    beta_sa: np.ndarray
    gamma_g: np.ndarray
    beta_g: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, n_channels, n_groups, dtype=np.float64, **kwargs):
        if n_groups < 1:
            raise ContractError(f"number of groups must be >= 1, got {n_groups}")
        return cls(
            gamma_sa=np.ones(n_channels, dtype),
            beta_sa=np.zeros(n_channels, dtype),
            gamma_g=np.ones((n_groups, n_channels), dtype),
            beta_g=np.zeros((n_groups, n_channels), dtype),
            running_mean=np.zeros(n_channels, dtype),
            running_var=np.ones(n_channels, dtype),
            **kwargs,
        )

    @classmethod
    def from_vanilla(cls, state: BatchNormState, n_groups):
        """Shared pair takes the vanilla affine; group pairs start at the identity."""
        if n_groups < 1:
            raise ContractError(f"number of groups must be >= 1, got {n_groups}")
        c = state.n_channels
        dtype = state.gamma.dtype
        return cls(
            gamma_sa=state.gamma.copy(),
            beta_sa=state.beta.copy(),
            gamma_g=np.ones((n_groups, c), dtype),
            beta_g=np.zeros((n_groups, c), dtype),
            running_mean=state.running_mean.copy(),
            running_var=state.running_var.copy(),
            momentum=state.momentum,
            eps=state.eps,
        )

    def collapse(self, group=0) -> BatchNormState:
        """Fold the shared pair and one group's pair into a single vanilla affine."""
        gg, bg = self.gamma_g[group], self.beta_g[group]
        return BatchNormState(
            gamma=gg * self.gamma_sa,
            beta=gg * self.beta_sa + bg,
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            momentum=self.momentum,
            eps=self.eps,
        )

    @property
    def n_groups(self):
        return self.gamma_g.shape[0]

    @property
    def n_channels(self):
        return self.gamma_sa.shape[0]


@dataclass
class NormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    training: bool
    extra: dict = field(default_factory=dict)


def _normalize(x, state, training):
    x = check_tensor(x, 3, "batch_norm input")
    check_axis(x.shape[1], state.running_mean.shape[0], 1, "batch_norm input")
    if training:
        n = x.shape[0] * x.shape[2]
        if n == 0:
            raise ContractError("batch_norm: empty batch in train mode")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        m = state.momentum
        unbiased = var * (n / (n - 1)) if n > 1 else var
        state.running_mean[...] = m * state.running_mean + (1 - m) * mean
        state.running_var[...] = m * state.running_var + (1 - m) * unbiased
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    x_hat = (x - mean[None, :, None]) * inv_std[None, :, None]
    return x_hat.astype(x.dtype, copy=False), NormCache(x_hat, inv_std.astype(x.dtype), training)


def _normalize_backward(d_xhat, cache):
    inv_std = cache.inv_std[None, :, None]
    if not cache.training:
        return d_xhat * inv_std
    x_hat = cache.x_hat
    n = d_xhat.shape[0] * d_xhat.shape[2]
    s1 = d_xhat.sum(axis=(0, 2), keepdims=True)
    s2 = (d_xhat * x_hat).sum(axis=(0, 2), keepdims=True)
    return inv_std / n * (n * d_xhat - s1 - x_hat * s2)


def _group_sum(per_sample, g, n_groups):
    out = np.zeros((n_groups, per_sample.shape[1]), dtype=per_sample.dtype)
    np.add.at(out, g, per_sample)
    return out


def batch_norm_forward(x, state: BatchNormState, training=True):
    """``h = gamma * (x - mean) / sqrt(var + eps) + beta``. Returns ``(h, cache)``."""
    x_hat, cache = _normalize(x, state, training)
    return state.gamma[None, :, None] * x_hat + state.beta[None, :, None], cache


def batch_norm_backward(grad, cache, state: BatchNormState):
    """Return ``(d_input, {"gamma": ..., "beta": ...})``."""
    grads = {
        "gamma": (grad * cache.x_hat).sum(axis=(0, 2)),
        "beta": grad.sum(axis=(0, 2)),
    }
    d_x = _normalize_backward(grad * state.gamma[None, :, None], cache)
    return d_x, grads


def categorical_bn_forward(x, state: CategoricalBNState, g, training=True):
    """CCBN: shared statistics, affine ``(gamma_g, beta_g)`` chosen per sample by ``g``."""
    g = check_group_index(g, np.shape(x)[0], state.n_groups)
    x_hat, cache = _normalize(x, state, training)
    cache.extra["g"] = g
    out = state.gamma_g[g][:, :, None] * x_hat + state.beta_g[g][:, :, None]
    return out, cache


def categorical_bn_backward(grad, cache, state: CategoricalBNState):
    g = cache.extra["g"]
    grads = {
        "gamma_g": _group_sum((grad * cache.x_hat).sum(axis=2), g, state.n_groups),
        "beta_g": _group_sum(grad.sum(axis=2), g, state.n_groups),
    }
    d_x = _normalize_backward(grad * state.gamma_g[g][:, :, None], cache)
    return d_x, grads


def sandwich_bn_forward(x, state: SandwichBNState, g, training=True):
    """SaBN: ``h = gamma_g * (gamma_sa * x_hat + beta_sa) + beta_g``."""
    g = check_group_index(g, np.shape(x)[0], state.n_groups)
    x_hat, cache = _normalize(x, state, training)
    shared = state.gamma_sa[None, :, None] * x_hat + state.beta_sa[None, :, None]
    cache.extra["g"] = g
    cache.extra["shared"] = shared
    out = state.gamma_g[g][:, :, None] * shared + state.beta_g[g][:, :, None]
    return out, cache


def sandwich_bn_backward(grad, cache, state: SandwichBNState):
    g = cache.extra["g"]
    shared = cache.extra["shared"]
    d_shared = grad * state.gamma_g[g][:, :, None]
    grads = {
        "gamma_g": _group_sum((grad * shared).sum(axis=2), g, state.n_groups),
        "beta_g": _group_sum(grad.sum(axis=2), g, state.n_groups),
        "gamma_sa": (d_shared * cache.x_hat).sum(axis=(0, 2)),
        "beta_sa": d_shared.sum(axis=(0, 2)),
    }
    d_x = _normalize_backward(d_shared * state.gamma_sa[None, :, None], cache)
    return d_x, grads


def batch_norm(x, state, training=True):
    return batch_norm_forward(x, state, training)[0]


def categorical_bn(x, state, g, training=True):
    return categorical_bn_forward(x, state, g, training)[0]


def sandwich_bn(x, state, g, training=True):
    return sandwich_bn_forward(x, state, g, training)[0]
