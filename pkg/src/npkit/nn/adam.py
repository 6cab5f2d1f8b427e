"""Adam with bias correction, as a pure function over parameter maps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from .params import ParamStore


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return AdamState(lr, beta1, beta2, eps, 0, zeros, {k: z.copy() for k, z in zeros.items()})


def adam_step(params, grads, state: AdamState) -> tuple[ParamStore, AdamState]:
    """Return updated parameters and optimiser state; inputs are left untouched."""
    if set(grads) != set(params) or set(state.m) != set(params):
        raise DimensionError("adam_step: gradient/state names do not mirror the parameters")
    step = state.step + 1
    c1 = 1.0 - state.beta1 ** step
    c2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = ParamStore(), {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DimensionError(f"adam_step: {name} gradient {g.shape} vs parameter {p.shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps, step, new_m, new_v)
