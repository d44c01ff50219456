"""CSV reports over one or more evaluated runs."""
from __future__ import annotations

import csv
import os
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import ValidationError
from .metrics import IncidentMetrics, PacketMetrics, incident_metrics, packet_metrics
from .stats import compare

PACKET_COLUMNS = ("run_id", "seed", "variant", "precision", "recall", "f1")
INCIDENT_COLUMNS = ("run_id", "incident_id", "start_idx", "end_idx", "L_i", "L_hat_i", "C_PI", "DTR_I",
                    "C_I", "RMSE_L")
STATS_COLUMNS = ("metric", "variant_a", "variant_b", "mean_a", "mean_b", "U", "p_value", "a12", "magnitude")
COMPARED_METRICS = ("precision", "recall", "f1")
AGGREGATE_ID = "all"
REFERENCE_VARIANT = "full"


@dataclass
class RunResult:
    run_id: str
    seed: int
    variant: str
    packet: PacketMetrics
    incidents: IncidentMetrics | None

    def metric(self, name: str) -> float:
        return float(getattr(self.packet, name))


def evaluate_run(run_id: str, seed: int, variant: str, pred, true, timestamps=None) -> RunResult:
    """Packet metrics always; incident metrics when the labels contain at least one incident."""
    pm = packet_metrics(pred, true)
    im = incident_metrics(pred, true, timestamps) if np.any(np.asarray(true) == 1) else None
    return RunResult(run_id, int(seed), str(variant), pm, im)


def _f(x: float) -> str:
    return f"{x:.6f}"


def write_packet_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PACKET_COLUMNS)
        for r in results:
            w.writerow([r.run_id, r.seed, r.variant, _f(r.packet.precision), _f(r.packet.recall), _f(r.packet.f1)])


def write_incident_csv(results, path) -> None:
    """One row per incident, then one aggregate row per run carrying C_I and RMSE_L."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INCIDENT_COLUMNS)
        for r in results:
            m = r.incidents
            if m is None:
                continue
            for k, inc in enumerate(m.incidents):
                w.writerow([r.run_id, k, inc.start_idx, inc.end_idx, inc.length, m.predicted_lengths[k],
                            _f(m.c_pi[k]), _f(m.dtr_i[k]), "", ""])
            w.writerow([r.run_id, AGGREGATE_ID, "", "", "", "", _f(m.mean_c_pi), _f(m.mean_dtr_i),
                        _f(m.c_i), _f(m.rmse_l)])


def comparison_rows(results, reference: str = REFERENCE_VARIANT) -> list[dict]:
    """Each other variant against the reference (or every pair when the reference is absent)."""
    by_variant: dict[str, list[RunResult]] = defaultdict(list)
    for r in results:
        by_variant[r.variant].append(r)
    names = list(by_variant)
    if reference in by_variant:
        pairs = [(reference, v) for v in names if v != reference]
    else:
        pairs = list(combinations(names, 2))
    rows = []
    for va, vb in pairs:
        for metric in COMPARED_METRICS:
            a = [r.metric(metric) for r in by_variant[va]]
            b = [r.metric(metric) for r in by_variant[vb]]
            res = compare(a, b)
            rows.append(dict(metric=metric, variant_a=va, variant_b=vb, mean_a=float(np.mean(a)),
                             mean_b=float(np.mean(b)), U=res.u, p_value=res.p_value, a12=res.a12,
                             magnitude=res.magnitude.value))
    return rows


def write_stats_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for row in rows:
            w.writerow([row["metric"], row["variant_a"], row["variant_b"], _f(row["mean_a"]), _f(row["mean_b"]),
                        f"{row['U']:.1f}", _f(row["p_value"]), _f(row["a12"]), row["magnitude"]])


def summary_text(results, rows=()) -> str:
    lines = []
    for r in results:
        line = f"{r.run_id}: precision {r.packet.precision:.3f} recall {r.packet.recall:.3f} f1 {r.packet.f1:.3f}"
        if r.incidents is not None:
            line += (f" | C_I {r.incidents.c_i:.3f} mean C_PI {r.incidents.mean_c_pi:.3f}"
                     f" mean DTR_I {r.incidents.mean_dtr_i:.3f} RMSE_L {r.incidents.rmse_l:.2f}")
        lines.append(line)
    for row in rows:
        lines.append(f"{row['metric']}: {row['variant_a']} {row['mean_a']:.3f} vs {row['variant_b']} "
                     f"{row['mean_b']:.3f}, U={row['U']:.1f} p={row['p_value']:.4f} "
                     f"A12={row['a12']:.3f} ({row['magnitude']})")
    return "\n".join(lines)


def emit_report(results, out_dir, echo: bool = True) -> dict[str, str]:
    """Write packet_metrics.csv, incident_metrics.csv and stats.csv into ``out_dir``.

    stats.csv keeps only its header unless some variant has enough runs to
    be compared.
    """
    results = list(results)
    if not results:
        raise ValidationError("no run results to report")
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("packet_metrics.csv", "incident_metrics.csv", "stats.csv")}
    write_packet_csv(results, paths["packet_metrics.csv"])
    write_incident_csv(results, paths["incident_metrics.csv"])
    counts = defaultdict(int)
    for r in results:
        counts[r.variant] += 1
    comparable = len(counts) > 1 and min(counts.values()) >= 3
    rows = comparison_rows(results) if comparable else []
    write_stats_csv(rows, paths["stats.csv"])
    if echo:
        print(summary_text(results, rows))
    return paths
