"""Adam optimizer with bias correction, operating on Tensor parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moments plus the shared hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, learning_rate: float = 1e-3,
                  beta1: float = 0.9, beta2: float = 0.999,
                  epsilon: float = 1e-8) -> "AdamState":
        return cls(
            m=np.zeros_like(param.data),
            v=np.zeros_like(param.data),
            t=0,
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState) -> None:
    """One in-place Adam update; increments ``state.t``."""
    if grad.shape != param.data.shape:
        raise ShapeError(
            f"adam_step: grad shape {grad.shape} does not match "
            f"param shape {param.data.shape}"
        )
    if state.m.shape != param.data.shape:
        raise ShapeError(
            f"adam_step: state shape {state.m.shape} does not match "
            f"param shape {param.data.shape}"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * (grad * grad)
    mhat = state.m / (1.0 - b1 ** state.t)
    vhat = state.v / (1.0 - b2 ** state.t)
    param.data -= (state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)).astype(
        param.data.dtype, copy=False
    )


class Adam:
    """Convenience wrapper tracking one AdamState per parameter."""

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.states = [
            AdamState.for_param(p, learning_rate, beta1, beta2, epsilon)
            for p in self.params
        ]

    def step(self) -> None:
        for p, st in zip(self.params, self.states):
            if p.grad is None:
                adam_step(p, np.zeros_like(p.data), st)
            else:
                adam_step(p, p.grad, st)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
