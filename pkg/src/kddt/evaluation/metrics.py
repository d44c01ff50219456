"""Packet-level and incident-level detection metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, DomainError
from .incidents import Incident, extract_incidents

# an incident counts as identified once at least this share of it is flagged
IDENTIFIED_SHARE = 0.5


def _binary(labels, name: str) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {y.shape}")
    if y.size and not np.isin(y, (0, 1)).all():
        raise DomainError(f"{name} must contain only 0 and 1")
    return y.astype(np.int64)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class PacketMetrics:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_from(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


def packet_metrics(pred, true) -> PacketMetrics:
    """Precision, recall and F1 of the abnormal class; empty denominators give 0."""
    p, t = _binary(pred, "predictions"), _binary(true, "labels")
    if p.shape != t.shape:
        raise DimensionError(f"{len(p)} predictions for {len(t)} labels")
    counts = ConfusionCounts(
        tp=int(((p == 1) & (t == 1)).sum()), fp=int(((p == 1) & (t == 0)).sum()),
        tn=int(((p == 0) & (t == 0)).sum()), fn=int(((p == 0) & (t == 1)).sum()))
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    return PacketMetrics(precision, recall, f1_from(precision, recall), counts)


# incidents -------------------------------------------------------------------

def _span(incident: Incident, pred: np.ndarray) -> np.ndarray:
    if incident.start_idx < 0 or incident.end_idx >= len(pred) or incident.end_idx < incident.start_idx:
        raise DimensionError(
            f"incident [{incident.start_idx}, {incident.end_idx}] lies outside a stream of {len(pred)} packets")
    return pred[incident.start_idx:incident.end_idx + 1]


def packet_incident_coverage(incident: Incident, pred) -> float:
    """Share of the incident's packets predicted abnormal (C_PI)."""
    span = _span(incident, _binary(pred, "predictions"))
    return float(span.sum()) / len(span)


def incident_coverage(incidents, pred) -> float:
    """Share of incidents whose C_PI reaches one half (C_I)."""
    incidents = list(incidents)
    if not incidents:
        raise DomainError("incident coverage is undefined without incidents")
    pred = _binary(pred, "predictions")
    hit = sum(packet_incident_coverage(inc, pred) >= IDENTIFIED_SHARE for inc in incidents)
    return hit / len(incidents)


def first_detection(incident: Incident, pred) -> int | None:
    """Index of the first packet flagged inside the incident, or None."""
    span = _span(incident, _binary(pred, "predictions"))
    hits = np.flatnonzero(span)
    return None if len(hits) == 0 else incident.start_idx + int(hits[0])


def detection_time_rate(incident: Incident, pred, timestamps) -> float:
    """Elapsed share of the incident's duration before its first flagged packet (DTR_I).

    Undetected incidents score 1. A zero-duration incident scores 0 when its
    first packet is flagged and 1 otherwise.
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    hit = first_detection(incident, pred)
    if len(ts) != len(np.asarray(pred)):
        raise DimensionError(f"{len(ts)} timestamps for {len(np.asarray(pred))} predictions")
    if hit is None:
        return 1.0
    duration = incident.end_us - incident.start_us
    if duration <= 0:
        return 0.0 if hit == incident.start_idx else 1.0
    return float(ts[hit] - incident.start_us) / duration


def predicted_length(incident: Incident, pred) -> int:
    """Number of packets flagged inside the incident span (L-hat)."""
    return int(_span(incident, _binary(pred, "predictions")).sum())


def rmse_length(incidents, pred) -> float:
    incidents = list(incidents)
    if not incidents:
        raise DomainError("length error is undefined without incidents")
    pred = _binary(pred, "predictions")
    err = [(inc.length - predicted_length(inc, pred)) ** 2 for inc in incidents]
    return math.sqrt(sum(err) / len(err))


@dataclass
class IncidentMetrics:
    incidents: list[Incident]
    c_pi: list[float]
    c_i: float
    dtr_i: list[float]
    rmse_l: float
    predicted_lengths: list[int]
    first_detections: list[int | None] = field(default_factory=list)

    @property
    def mean_c_pi(self) -> float:
        return float(np.mean(self.c_pi))

    @property
    def mean_dtr_i(self) -> float:
        return float(np.mean(self.dtr_i))

    @property
    def n_identified(self) -> int:
        return sum(c >= IDENTIFIED_SHARE for c in self.c_pi)


def incident_metrics(pred, true, timestamps=None) -> IncidentMetrics:
    """All incident-level metrics for one stream; the true labels define the incidents."""
    p, t = _binary(pred, "predictions"), _binary(true, "labels")
    if p.shape != t.shape:
        raise DimensionError(f"{len(p)} predictions for {len(t)} labels")
    ts = np.arange(len(t), dtype=np.int64) if timestamps is None else np.asarray(timestamps, dtype=np.int64)
    incidents = extract_incidents(t, ts)
    if not incidents:
        raise DomainError("the labelled stream contains no incidents")
    return IncidentMetrics(
        incidents=incidents,
        c_pi=[packet_incident_coverage(inc, p) for inc in incidents],
        c_i=incident_coverage(incidents, p),
        dtr_i=[detection_time_rate(inc, p, ts) for inc in incidents],
        rmse_l=rmse_length(incidents, p),
        predicted_lengths=[predicted_length(inc, p) for inc in incidents],
        first_detections=[first_detection(inc, p) for inc in incidents],
    )
