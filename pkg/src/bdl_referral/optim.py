"""Adam with bias correction over a list of parameter arrays."""

from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteGradientError, ShapeError


@dataclass(frozen=True)
class AdamState:
    m: tuple
    v: tuple
    t: int = 0
    learning_rate: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, learning_rate=4e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        zeros = tuple(np.zeros_like(a, dtype=float) for a in arrays)
        return cls(zeros, tuple(z.copy() for z in zeros), 0, learning_rate, beta1, beta2, eps)


def _check_finite(grads):
    offset = 0
    for g in grads:
        bad = ~np.isfinite(g)
        if bad.any():
            i = int(np.flatnonzero(bad.ravel())[0])
            raise NonFiniteGradientError(offset + i, g.ravel()[i])
        offset += g.size


def adam_step(state, params, grads):
    """One Adam update. ``params``/``grads`` are sequences of arrays; returns ``(params, state)``."""
    params = [np.asarray(p, dtype=float) for p in params]
    grads = [np.asarray(g, dtype=float) for g in grads]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    _check_finite(grads)

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(tuple(new_m), tuple(new_v), t, state.learning_rate, b1, b2, state.eps)
    return new_params, new_state
