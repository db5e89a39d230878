"""SGD and Adam update rules.

Learning rate and beta1 come from the caller every step; the schedules live
elsewhere. Ranged Adam keeps moments only for its own [start, end) slice,
which is how parameter-server shards and local optimizers use it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import LayoutMismatch, NumericalFault, ParamVector


@dataclass(frozen=True)
class HyperParams:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)

    def __len__(self) -> int:
        return len(self.m)


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    if params.layout != grad.layout:
        raise LayoutMismatch("params and grad have different layouts")
    return ParamVector(params.layout, params.values - lr * grad.values)


def adam_delta_(g: np.ndarray, state: AdamState, hp: HyperParams) -> np.ndarray:
    """Advance ``state`` in place and return the additive parameter change."""
    if g.shape != state.m.shape:
        raise LayoutMismatch(f"gradient of length {g.size} for state of length {state.m.size}")
    state.t += 1
    state.m *= hp.beta1
    state.m += (1.0 - hp.beta1) * g
    state.v *= hp.beta2
    state.v += (1.0 - hp.beta2) * (g * g)
    m_hat = state.m / (1.0 - hp.beta1 ** state.t)
    v_hat = state.v / (1.0 - hp.beta2 ** state.t)
    delta = -hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps)
    if not np.all(np.isfinite(delta)):
        raise NumericalFault("non-finite Adam update")
    return delta


def adam_step(params: ParamVector, grad: ParamVector, state: AdamState,
              hp: HyperParams) -> tuple[ParamVector, AdamState]:
    if params.layout != grad.layout:
        raise LayoutMismatch("params and grad have different layouts")
    new_state = state.copy()
    delta = adam_delta_(grad.values, new_state, hp)
    return ParamVector(params.layout, params.values + delta), new_state


def adam_step_ranged(params: ParamVector, grad: ParamVector, state: AdamState, hp: HyperParams,
                     start: int, end: int) -> tuple[ParamVector, AdamState]:
    """Adam restricted to [start, end); ``state`` covers exactly that range.

    An empty range still advances ``state.t`` so shard counters stay in step.
    """
    if params.layout != grad.layout:
        raise LayoutMismatch("params and grad have different layouts")
    if not 0 <= start <= end <= len(params):
        raise IndexError(f"range [{start}, {end}) outside [0, {len(params)})")
    if len(state) != end - start:
        raise LayoutMismatch(f"state of length {len(state)} for range of length {end - start}")
    new_state = state.copy()
    delta = adam_delta_(grad.values[start:end], new_state, hp)
    out = params.values.copy()
    out[start:end] += delta
    return ParamVector(params.layout, out), new_state
