from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvariantError
from .params import ParameterStore


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def adamw_step(store: ParameterStore, state: AdamWState) -> None:
    """One AdamW update in place: decoupled decay, bias-corrected moments.

    Every parameter must carry a gradient. Gradients are cleared afterwards.
    """
    missing = [name for name, t in store.items() if t.grad is None]
    if missing:
        raise InvariantError(f"no gradient for parameters: {missing}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    for name, p in store.items():
        g = p.grad.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if state.weight_decay:
            p.data *= (1 - state.lr * state.weight_decay)
        p.data -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
        p.grad = None


class AdamW:
    """Convenience wrapper bundling a store with its optimiser state."""

    def __init__(self, store: ParameterStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.store = store
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def step(self) -> None:
        adamw_step(self.store, self.state)
