"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParameterStore
from .tensor import Tensor


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tol: float
    flagged: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def ok(self) -> bool:
        return not self.flagged


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the parameter's largest gradient magnitude."""
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(analytic))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradcheck(
    forward: Callable[[ParameterStore], Tensor],
    store: ParameterStore,
    tol: float = 1e-3,
    h: float | None = None,
    numeric_dtype=np.float64,
    max_elements: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare backprop gradients of ``forward(store)`` with central differences.

    Analytic gradients are taken at the store's own precision. Differences are
    evaluated on a copy cast to ``numeric_dtype`` (default float64, h=1e-5;
    at float32 h=1e-3). ``max_elements`` samples that many entries per
    parameter instead of all of them.
    """
    if h is None:
        h = 1e-5 if np.dtype(numeric_dtype) == np.float64 else 1e-3
    store.zero_grad()
    loss = forward(store)
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.items()}
    store.zero_grad()

    probe = store.astype(numeric_dtype)
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}
    for name, t in probe.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.empty(idx.size)
        for k, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + h
            up = float(forward(probe).data)
            flat[j] = orig - h
            down = float(forward(probe).data)
            flat[j] = orig
            numeric[k] = (up - down) / (2 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    flagged = [n for n, e in errors.items() if e > tol]
    return GradcheckReport(errors=errors, tol=tol, flagged=flagged)
