"""Packet anomaly detection with a distilled digital twin."""
__version__ = "0.1.0"
