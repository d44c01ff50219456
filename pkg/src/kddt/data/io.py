"""Readers and writers for classic PCAP captures and the JSONL packet format."""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import OrderingError, ParseError, UnsupportedFormatError, ValidationError
from .dataset import DatasetKind, LabeledDataset, RawPacket

PCAP_MAGIC = 0xA1B2C3D4
_GLOBAL = struct.Struct("<IHHiIII")
_RECORD = struct.Struct("<IIII")
LINKTYPE_ETHERNET = 1


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    return Path(source).read_bytes()


def read_pcap(source) -> list[RawPacket]:
    """Parse a little-endian classic pcap capture (microsecond timestamps)."""
    data = _read_bytes(source)
    if len(data) < _GLOBAL.size:
        raise ParseError("file shorter than the pcap global header", offset=len(data))
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic != PCAP_MAGIC:
        raise UnsupportedFormatError(f"unsupported capture magic 0x{magic:08x}")
    packets = []
    pos = _GLOBAL.size
    while pos < len(data):
        if pos + _RECORD.size > len(data):
            raise ParseError("truncated record header", offset=pos)
        ts_sec, ts_frac, incl_len, _orig = _RECORD.unpack_from(data, pos)
        body = pos + _RECORD.size
        if body + incl_len > len(data):
            raise ParseError(f"record data of {incl_len} bytes exceeds file", offset=pos)
        packets.append(RawPacket(ts_sec * 1_000_000 + ts_frac, data[body:body + incl_len]))
        pos = body + incl_len
    return packets


def write_pcap(packets: Iterable[RawPacket], target, snaplen: int = 65535,
               network: int = LINKTYPE_ETHERNET) -> None:
    out = bytearray(_GLOBAL.pack(PCAP_MAGIC, 2, 4, 0, 0, snaplen, network))
    for p in packets:
        sec, frac = divmod(p.timestamp_us, 1_000_000)
        out += _RECORD.pack(sec, frac, len(p.payload), len(p.payload))
        out += p.payload
    if hasattr(target, "write"):
        target.write(bytes(out))
    else:
        Path(target).write_bytes(bytes(out))


def _lines(source) -> list[str]:
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    return text.splitlines()


def read_jsonl(source, kind: DatasetKind | str = DatasetKind.ID) -> LabeledDataset:
    """Load ``{"ts_us": int, "payload_hex": str, "label": 0|1}`` lines.

    Labels are required for in-domain kinds and dropped for OOD.
    """
    kind = DatasetKind(kind)
    packets = []
    prev = None
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line=lineno)
        ts = obj.get("ts_us")
        if not isinstance(ts, int) or isinstance(ts, bool) or ts < 0:
            raise ParseError("ts_us must be a non-negative integer", line=lineno)
        hx = obj.get("payload_hex")
        if not isinstance(hx, str):
            raise ParseError("payload_hex must be a string", line=lineno)
        try:
            payload = bytes.fromhex(hx)
        except ValueError:
            raise ParseError(f"malformed payload_hex {hx[:16]!r}", line=lineno) from None
        label = obj.get("label")
        if label is not None and label not in (0, 1):
            raise ParseError(f"label must be 0 or 1, got {label!r}", line=lineno)
        if label is None and kind.labelled:
            raise ValidationError(f"line {lineno}: missing label in {kind.value} dataset")
        if prev is not None and ts < prev:
            raise OrderingError(f"line {lineno}: timestamp {ts} precedes {prev}")
        prev = ts
        packets.append(RawPacket(ts, payload, None if not kind.labelled else int(label)))
    return LabeledDataset(tuple(packets), kind)


def write_jsonl(ds: LabeledDataset | Sequence[RawPacket], target) -> None:
    lines = []
    for p in ds:
        obj = {"ts_us": p.timestamp_us, "payload_hex": p.payload.hex()}
        if p.label is not None:
            obj["label"] = p.label
        lines.append(json.dumps(obj, separators=(",", ":")))
    text = "\n".join(lines) + ("\n" if lines else "")
    if hasattr(target, "write"):
        target.write(text)
    else:
        tmp = f"{os.fspath(target)}.tmp"
        Path(tmp).write_text(text, encoding="utf-8")
        os.replace(tmp, target)


def read_anomaly_windows(source) -> list[tuple[int, int]]:
    """Sidecar file of ``{"start_us": int, "end_us": int}`` lines."""
    windows = []
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            windows.append((int(obj["start_us"]), int(obj["end_us"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ParseError("expected {\"start_us\": int, \"end_us\": int}", line=lineno) from None
    return windows


def load_stream(path, kind: DatasetKind | str, windows_path=None) -> LabeledDataset:
    """Load JSONL, or PCAP plus an optional sidecar of anomaly windows."""
    from .dataset import apply_anomaly_windows

    kind = DatasetKind(kind)
    suffix = Path(path).suffix.lower()
    if suffix in (".pcap", ".cap"):
        packets = read_pcap(path)
        if not kind.labelled:
            return LabeledDataset(tuple(packets), kind)
        if windows_path is None:
            raise ValidationError(f"{path}: labelled PCAP input needs an anomaly-window sidecar")
        return apply_anomaly_windows(packets, read_anomaly_windows(windows_path), kind)
    return read_jsonl(path, kind)
