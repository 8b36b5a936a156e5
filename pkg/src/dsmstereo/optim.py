"""Adam optimizer operating on a :class:`~dsmstereo.params.ParamSet`."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """Apply one bias-corrected Adam update in place using ``params.grads``.

    Raises ValidationError (and leaves everything untouched) when any
    gradient is non-finite.
    """
    names = params.trainable()
    for name in names:
        if not np.all(np.isfinite(params.grads[name])):
            raise ValidationError(f"non-finite gradient for {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name in names:
        g = params.grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        params[name] = params[name] - update
    return params, state
