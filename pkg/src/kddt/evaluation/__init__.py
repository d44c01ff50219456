"""Detection metrics, incident extraction and run comparison."""
from .incidents import Incident, extract_incidents
from .metrics import (ConfusionCounts, PacketMetrics, IncidentMetrics, packet_metrics, packet_incident_coverage,
                      incident_coverage, detection_time_rate, rmse_length, predicted_length, incident_metrics,
                      f1_from)
from .stats import Magnitude, StatTestResult, mann_whitney, a12, a12_effect, magnitude, compare
from .report import RunResult, evaluate_run, emit_report
