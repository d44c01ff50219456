from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Incident:
    start_idx: int
    end_idx: int
    start_us: int
    end_us: int

    @property
    def length(self) -> int:
        return self.end_idx - self.start_idx + 1


def extract_incidents(labels, timestamps=None) -> list[Incident]:
    """Maximal runs of 1s, in index order."""
    y = np.asarray(labels, dtype=np.int64)
    ts = np.arange(len(y)) if timestamps is None else np.asarray(timestamps, dtype=np.int64)
    padded = np.concatenate([[0], y, [0]])
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [Incident(int(s), int(e), int(ts[s]), int(ts[e])) for s, e in zip(starts, ends)]
