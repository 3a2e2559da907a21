"""Adam with coupled (L2-style) weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from himt.autodiff import Parameter
from himt.errors import ShapeError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param: Parameter, **hyper) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), **hyper)


def adam_step(param: Parameter, state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes ``param.grad`` afterwards."""
    if state.m.shape != param.shape or state.v.shape != param.shape or param.grad.shape != param.shape:
        raise ShapeError(f"adam_step: state {state.m.shape} vs param {param.shape} ({param.name})")
    g = param.grad
    if state.weight_decay:
        g = g + state.weight_decay * param.value
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    param.zero_grad()


@dataclass
class Adam:
    params: list[Parameter]
    lr: float = 2e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        hyper = dict(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                     weight_decay=self.weight_decay)
        self.states = [AdamState.for_param(p, **hyper) for p in self.params]

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            adam_step(p, s)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
