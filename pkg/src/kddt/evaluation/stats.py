"""Rank-based comparison of two samples of run results."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import DomainError

MIN_SAMPLE = 3


class Magnitude(str, Enum):
    NEGLIGIBLE = "Negligible"
    SMALL = "Small"
    MEDIUM = "Medium"
    LARGE = "Large"


# lower edges of the Small, Medium and Large bands above 0.5
BANDS = ((0.71, Magnitude.LARGE), (0.64, Magnitude.MEDIUM), (0.56, Magnitude.SMALL))


@dataclass(frozen=True)
class StatTestResult:
    u: float
    p_value: float
    a12: float
    magnitude: Magnitude


def _sample(x, name: str, min_size: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if len(a) < min_size:
        raise DomainError(f"{name} needs at least {min_size} values, got {len(a)}")
    if not np.isfinite(a).all():
        raise DomainError(f"{name} contains non-finite values")
    return a


def _rankdata(x: np.ndarray) -> np.ndarray:
    """Average ranks, 1-based."""
    order = np.argsort(x, kind="mergesort")
    s = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2))


def mann_whitney(a, b) -> tuple[float, float]:
    """Smaller U statistic and two-sided p from the tie- and continuity-corrected normal approximation."""
    a, b = _sample(a, "sample_a", MIN_SAMPLE), _sample(b, "sample_b", MIN_SAMPLE)
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _rankdata(pooled)
    u_a = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    u = min(u_a, n1 * n2 - u_a)
    n = n1 + n2
    _, tie_sizes = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_sizes ** 3) - tie_sizes).sum())
    var = n1 * n2 / 12 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return float(u), 1.0
    z = (abs(u - n1 * n2 / 2) - 0.5) / math.sqrt(var)
    p = min(1.0, 2 * _normal_sf(max(z, 0.0)))
    return float(u), p


def a12(a, b) -> float:
    """Probability that a value from ``a`` beats one from ``b``, ties counting half."""
    a, b = _sample(a, "sample_a", 1), _sample(b, "sample_b", 1)
    greater = (a[:, None] > b[None, :]).sum()
    ties = (a[:, None] == b[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(a) * len(b)))


def magnitude(a12_value: float) -> Magnitude:
    if not 0 <= a12_value <= 1:
        raise DomainError(f"A12 must lie in [0, 1], got {a12_value}")
    d = max(a12_value, 1 - a12_value)
    for edge, band in BANDS:
        # mirrored side: a value below 0.5 belongs to the band of 1 - value
        if d >= edge - 1e-12:
            return band
    return Magnitude.NEGLIGIBLE


def a12_effect(a, b) -> tuple[float, Magnitude]:
    value = a12(a, b)
    return value, magnitude(value)


def compare(a, b) -> StatTestResult:
    u, p = mann_whitney(a, b)
    value, band = a12_effect(a, b)
    return StatTestResult(u, p, value, band)
