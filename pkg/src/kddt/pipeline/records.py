"""Append-only run records that carry the configuration they were produced with."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

from ..errors import InvariantError, ParseError


def config_hash(ini_text: str) -> str:
    return hashlib.sha256(ini_text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    config_hash: str
    config: str
    stage: str
    checkpoints: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    wall_clock_s: dict = field(default_factory=dict)
    created: str = ""

    @classmethod
    def create(cls, cfg, stage: str, checkpoints=None, metrics=None, wall_clock_s=None) -> "RunRecord":
        ini = cfg.to_ini()
        return cls(run_id=f"{cfg.run.variant}-seed{cfg.seed}", config_hash=config_hash(ini), config=ini,
                   stage=stage, checkpoints=dict(checkpoints or {}), metrics=dict(metrics or {}),
                   wall_clock_s=dict(wall_clock_s or {}),
                   created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))

    def verify(self) -> bool:
        return config_hash(self.config) == self.config_hash

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def append_record(path, record: RunRecord) -> None:
    """Add one line; existing lines are never rewritten."""
    if not record.verify():
        raise InvariantError(f"record {record.run_id}: config hash does not match its config")
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")


def read_records(path, verify: bool = True) -> list[RunRecord]:
    out = []
    if not os.path.exists(path):
        return out
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = RunRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError) as e:
                raise ParseError(f"bad run record: {e}", line=lineno) from None
            if verify and not rec.verify():
                raise InvariantError(f"line {lineno}: config hash does not match the stored config")
            out.append(rec)
    return out
