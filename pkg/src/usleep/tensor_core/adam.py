"""Bias-corrected Adam over a dict of named parameter arrays."""
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ContractError, NonFiniteGradientError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")


def adam_step(params, grads, state: AdamState):
    """Update ``params`` in place and return it.

    Gradients are checked for finiteness before any parameter is touched, so
    a failing step leaves both the parameters and the optimizer state intact.
    Parameters missing from ``grads`` are skipped (treated as frozen).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1 ** t)
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.eps)
    return params
