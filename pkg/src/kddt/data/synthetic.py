"""Synthetic train-network traffic with injected packet-loss incidents.

Each packet carries a small header (device id, message type, sequence
counter) followed by ``n_signals`` one-byte signal values: wrapping
counters, noisy periodic waves and slowly drifting readings. Normal values
stay well away from 0.

The signals come from ``N_SOURCES`` sources holding contiguous blocks of
signal slots. A packet-loss incident silences one source, or all of them,
for a geometric number of packets: the affected bytes read exactly 0 and
then rebound to their normal values.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigurationError
from .dataset import DatasetKind, LabeledDataset, RawPacket

DEVICE_ID = (0x10, 0x01)
MSG_TYPE = 0x21
# devices whose signals share a packet; an incident silences one or all of them
N_SOURCES = 2
SEQ_MODULUS = 16


@dataclass(frozen=True)
class SyntheticConfig:
    n_packets: int = 20000
    anomaly_ratio: float = 0.05
    mean_incident_len: float = 20.0
    mean_incident_duration_us: float = 20000.0
    n_signals: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_packets < 2:
            raise ConfigurationError("n_packets must be at least 2")
        if not 0 < self.anomaly_ratio < 0.5:
            raise ConfigurationError(f"anomaly_ratio must lie in (0, 0.5), got {self.anomaly_ratio}")
        if self.mean_incident_len < 1:
            raise ConfigurationError("mean_incident_len must be >= 1")
        if self.mean_incident_duration_us <= 0:
            raise ConfigurationError("mean_incident_duration_us must be positive")
        if self.n_signals < 2:
            raise ConfigurationError("n_signals must be >= 2")

    @property
    def gap_us(self) -> float:
        """Mean inter-packet gap implied by the incident length and duration."""
        return self.mean_incident_duration_us / self.mean_incident_len

    def to_dict(self) -> dict:
        return asdict(self)


def _signals(rng: np.random.Generator, n: int, n_signals: int) -> np.ndarray:
    out = np.zeros((n, n_signals), dtype=np.int64)
    t = np.arange(n)
    for k in range(n_signals):
        kind = k % 3
        if kind == 0:  # wrapping counter
            period = int(rng.integers(16, 49))
            out[:, k] = 0x20 + (t + int(rng.integers(period))) % period
        elif kind == 1:  # noisy periodic wave
            period = rng.uniform(20, 60)
            amp = rng.uniform(30, 60)
            wave = 128 + amp * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
            out[:, k] = np.rint(wave + rng.normal(0, 1.0, n))
        else:  # slowly drifting reading
            walk = np.cumsum(rng.normal(0, 0.5, n))
            walk -= np.linspace(0, walk[-1], n)
            out[:, k] = np.clip(np.rint(170 + walk), 120, 230)
    return out


def _place_incidents(rng: np.random.Generator, n: int, cfg: SyntheticConfig) -> list[tuple[int, int]]:
    target = cfg.anomaly_ratio * n
    taken = np.zeros(n, dtype=bool)
    incidents: list[tuple[int, int]] = []
    total = 0
    failures = 0
    while total < target - cfg.mean_incident_len / 2:
        length = int(rng.geometric(1 / cfg.mean_incident_len))
        placed = False
        if length <= n - 2:
            # retry positions for the same length so long runs are not under-sampled
            for _ in range(200):
                start = int(rng.integers(1, n - length))
                lo, hi = start - 1, start + length + 1  # one normal packet of margin each side
                if not taken[lo:hi].any():
                    taken[start:start + length] = True
                    incidents.append((start, length))
                    total += length
                    placed = True
                    break
        failures = 0 if placed else failures + 1
        if failures > 50:
            raise ConfigurationError(
                f"could not place incidents: {total} of {target:.0f} abnormal packets placed")
    return sorted(incidents)


def source_slots(n_signals: int) -> list[np.ndarray]:
    """Signal columns owned by each source."""
    return np.array_split(np.arange(n_signals), N_SOURCES)


def _silenced(rng, n_signals: int) -> np.ndarray:
    choice = int(rng.integers(N_SOURCES + 1))
    return np.arange(n_signals) if choice == N_SOURCES else source_slots(n_signals)[choice]


def _assemble(rng, cfg: SyntheticConfig, signals: np.ndarray, labels: np.ndarray | None,
              kind: DatasetKind) -> LabeledDataset:
    n = len(signals)
    gaps = rng.uniform(0.9, 1.1, n) * cfg.gap_us
    ts = np.floor(np.cumsum(gaps) - gaps[0]).astype(np.int64)
    header = np.empty((n, 4), dtype=np.int64)
    header[:, 0], header[:, 1], header[:, 2] = DEVICE_ID[0], DEVICE_ID[1], MSG_TYPE
    header[:, 3] = np.arange(n) % SEQ_MODULUS
    raw = np.concatenate([header, signals], axis=1).astype(np.uint8)
    packets = tuple(
        RawPacket(int(ts[i]), raw[i].tobytes(), None if labels is None else int(labels[i]))
        for i in range(n))
    return LabeledDataset(packets, kind)


def generate_synthetic_stream(cfg: SyntheticConfig) -> LabeledDataset:
    """Labelled stream with packet-loss incidents; deterministic given ``cfg.seed``."""
    if cfg.anomaly_ratio * cfg.n_packets < cfg.mean_incident_len:
        raise ConfigurationError(
            "anomaly_ratio * n_packets is smaller than one mean incident; no incident can be placed")
    rng = np.random.default_rng(cfg.seed)
    signals = _signals(rng, cfg.n_packets, cfg.n_signals)
    labels = np.zeros(cfg.n_packets, dtype=np.int64)
    for start, length in _place_incidents(rng, cfg.n_packets, cfg):
        affected = _silenced(rng, cfg.n_signals)
        signals[start:start + length, affected[:, None]] = 0
        labels[start:start + length] = 1
    return _assemble(rng, cfg, signals, labels, DatasetKind.ID)


def generate_ood_stream(cfg: SyntheticConfig, n_packets: int | None = None) -> LabeledDataset:
    """Fault-free, unlabelled traffic from the same system (different seed stream)."""
    n = n_packets or cfg.n_packets
    rng = np.random.default_rng([cfg.seed, 0x00D])
    signals = _signals(rng, n, cfg.n_signals)
    return _assemble(rng, cfg, signals, None, DatasetKind.OOD)
