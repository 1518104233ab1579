"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor

# Learning rate reported for the full-size model; other hyperparameters are conventional.
DEFAULT_LR = 1e-6


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one Adam update to every parameter in ``params``.

    A parameter whose gradient is missing is treated as having gradient zero.
    Parameter arrays are replaced, never mutated, so earlier snapshots stay valid.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        elif m.shape != p.shape:
            raise ShapeError(f"{name}: optimizer moment shape {m.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    """Stateful wrapper: ``opt.step()`` consumes each parameter's ``.grad``."""

    def __init__(self, params: dict[str, Tensor], lr: float = DEFAULT_LR, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)
