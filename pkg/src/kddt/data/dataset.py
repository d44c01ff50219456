from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigurationError, OrderingError, ValidationError


@dataclass(frozen=True)
class RawPacket:
    timestamp_us: int
    payload: bytes
    label: int | None = None

    def __post_init__(self):
        if self.timestamp_us < 0:
            raise ValidationError("timestamp_us must be non-negative")
        if self.label not in (None, 0, 1):
            raise ValidationError(f"label must be 0, 1 or absent, got {self.label!r}")


class DatasetKind(str, Enum):
    OOD = "OOD"
    ID_TRAIN = "ID-train"
    ID_TEST = "ID-test"
    ID = "ID"

    @property
    def labelled(self) -> bool:
        return self is not DatasetKind.OOD


@dataclass(frozen=True)
class LabeledDataset:
    """An immutable, chronologically ordered packet stream."""

    packets: tuple[RawPacket, ...]
    kind: DatasetKind = DatasetKind.ID

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        prev = -1
        for i, p in enumerate(self.packets):
            if p.timestamp_us < prev:
                raise OrderingError(f"timestamp decreases at packet {i}")
            prev = p.timestamp_us
        if self.kind.labelled:
            missing = [i for i, p in enumerate(self.packets) if p.label is None]
            if missing:
                raise ValidationError(f"{self.kind.value} dataset: packet {missing[0]} has no label")
        elif any(p.label is not None for p in self.packets):
            object.__setattr__(
                self, "packets",
                tuple(RawPacket(p.timestamp_us, p.payload) for p in self.packets))

    def __len__(self) -> int:
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets)

    def __getitem__(self, i):
        return self.packets[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label if p.label is not None else 0 for p in self.packets], dtype=np.int64)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp_us for p in self.packets], dtype=np.int64)

    @property
    def payloads(self) -> list[bytes]:
        return [p.payload for p in self.packets]

    def with_kind(self, kind: DatasetKind | str) -> "LabeledDataset":
        return LabeledDataset(self.packets, DatasetKind(kind))


def chronological_split(ds: LabeledDataset, ratio: float) -> tuple[LabeledDataset, LabeledDataset]:
    """First floor(ratio * N) packets for training, the rest for testing."""
    if not 0 < ratio < 1:
        raise ConfigurationError(f"split ratio must lie in (0, 1), got {ratio}")
    n_train = math.floor(ratio * len(ds))
    if n_train == 0 or n_train == len(ds):
        raise ConfigurationError(f"split of {len(ds)} packets at {ratio} leaves one side empty")
    kinds = (DatasetKind.ID_TRAIN, DatasetKind.ID_TEST) if ds.kind.labelled else (DatasetKind.OOD, DatasetKind.OOD)
    return (LabeledDataset(ds.packets[:n_train], kinds[0]),
            LabeledDataset(ds.packets[n_train:], kinds[1]))


def apply_anomaly_windows(packets: Sequence[RawPacket], windows: Iterable[tuple[int, int]],
                          kind: DatasetKind | str = DatasetKind.ID) -> LabeledDataset:
    """Label packets abnormal when their timestamp falls in any inclusive window."""
    windows = sorted((int(s), int(e)) for s, e in windows)
    for s, e in windows:
        if e < s:
            raise ValidationError(f"anomaly window ends before it starts: ({s}, {e})")
    starts = np.array([w[0] for w in windows], dtype=np.int64)
    reach = np.maximum.accumulate(np.array([w[1] for w in windows], dtype=np.int64)) if windows else starts
    out = []
    for p in packets:
        k = np.searchsorted(starts, p.timestamp_us, side="right") - 1
        hit = k >= 0 and bool(reach[k] >= p.timestamp_us)
        out.append(RawPacket(p.timestamp_us, p.payload, int(hit)))
    return LabeledDataset(tuple(out), kind)


def dataset_statistics(ds: LabeledDataset) -> dict[str, float | int]:
    """Counts in the shape of a dataset summary table: N, N_NP, N_AP, N_AI,
    mean incident length and mean incident duration (microseconds)."""
    from ..evaluation.incidents import extract_incidents

    n = len(ds)
    if not ds.kind.labelled:
        return {"N": n, "N_NP": n, "N_AP": None, "N_AI": None, "L_AI": None, "T_AI": None}
    labels = ds.labels
    incidents = extract_incidents(labels, ds.timestamps)
    n_ap = int(labels.sum())
    return {
        "N": n,
        "N_NP": n - n_ap,
        "N_AP": n_ap,
        "N_AI": len(incidents),
        "L_AI": float(np.mean([i.length for i in incidents])) if incidents else 0.0,
        "T_AI": float(np.mean([i.end_us - i.start_us for i in incidents])) if incidents else 0.0,
    }
