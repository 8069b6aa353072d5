"""Persisted run records.

A record is a pure function of (config, seed): wall-clock metadata lives in
a separate runtime file so identical-seed runs produce byte-identical
record files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from fscil_tricks import __version__
from fscil_tricks.errors import ConfigError, DataError
from fscil_tricks.metrics import GeometryReport, SessionResult

SCHEMA_VERSION = "1"

RECORD_FILE = "record.json"
RUNTIME_FILE = "runtime.json"


@dataclass
class ExperimentRecord:
    run_id: str
    config_hash: str
    seed: int
    toggles: dict[str, bool]
    stage_info: dict
    sessions: list[SessionResult]
    geometry: list[GeometryReport]
    library_version: str = __version__
    schema_version: str = SCHEMA_VERSION

    @property
    def final_accuracy(self) -> float:
        return self.sessions[-1].total_accuracy

    def session_accuracies(self) -> list[float]:
        return [s.total_accuracy for s in self.sessions]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "library_version": self.library_version,
            "toggles": self.toggles,
            "stage_info": self.stage_info,
            "sessions": [s.to_dict() for s in self.sessions],
            "geometry": [g.to_dict() for g in self.geometry],
            "final_accuracy": self.final_accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentRecord":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"record schema version {version!r} does not match expected {SCHEMA_VERSION!r}"
            )
        return cls(
            run_id=d["run_id"],
            config_hash=d["config_hash"],
            seed=int(d["seed"]),
            toggles={k: bool(v) for k, v in d["toggles"].items()},
            stage_info=dict(d["stage_info"]),
            sessions=[SessionResult.from_dict(s) for s in d["sessions"]],
            geometry=[GeometryReport.from_dict(g) for g in d["geometry"]],
            library_version=d.get("library_version", "unknown"),
            schema_version=version,
        )


def write_record(record: ExperimentRecord, run_dir: str | Path) -> Path:
    path = Path(run_dir) / RECORD_FILE
    path.write_text(record.to_json())
    return path


def load_record(run_dir: str | Path) -> ExperimentRecord:
    path = Path(run_dir) / RECORD_FILE
    if not path.is_file():
        raise DataError(f"no {RECORD_FILE} in {run_dir}")
    return ExperimentRecord.from_dict(json.loads(path.read_text()))
