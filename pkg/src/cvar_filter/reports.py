"""
Output files of simulation runs.

- ``traces/rollout_<i>.csv``: one row per step,
  ``t,x_1..x_n,u_legacy_1..u_legacy_m,u_1..u_m,h,margin,status``
- ``summary.json``: the violation report of a run
- ``sweep.csv``: one row per confidence level
- ``manifest.json``: what was run and which files it produced

CSV files are UTF-8 with LF line endings; floats are written in their
shortest round-trip form so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from io import StringIO
from pathlib import Path
from typing import Any

from .safety_filter import TraceRecord
from .scenarios import SweepRow, ViolationReport

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_HEADER = ["beta", "violation_rate", "mean_interference", "mean_margin", "violation_count", "num_rollouts"]


def _number(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def trace_header(n: int, m: int) -> list[str]:
    return (
        ["t"]
        + [f"x_{i}" for i in range(1, n + 1)]
        + [f"u_legacy_{j}" for j in range(1, m + 1)]
        + [f"u_{j}" for j in range(1, m + 1)]
        + ["h", "margin", "status"]
    )


def format_trace_csv(trace: Sequence[TraceRecord], n: int, m: int) -> str:
    """Format one rollout as CSV."""
    output = StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(trace_header(n, m))
    for record in trace:
        writer.writerow(
            [record.t]
            + [_number(v) for v in record.x]
            + [_number(v) for v in record.u_legacy]
            + [_number(v) for v in record.u]
            + [_number(record.h), _number(record.margin), record.status.value]
        )
    return output.getvalue()


def format_sweep_csv(rows: Sequence[SweepRow]) -> str:
    """Format a beta sweep as CSV."""
    output = StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow(
            [
                _number(row.beta),
                _number(row.violation_rate),
                _number(row.mean_interference),
                _number(row.mean_margin),
                row.report.violation_count,
                row.report.num_rollouts,
            ]
        )
    return output.getvalue()


def summary_dict(report: ViolationReport, config_hash: str) -> dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, "config_hash": config_hash, **report.to_dict()}


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    logger.debug("Wrote %s", path)
    return path


def _write_json(path: Path, data: dict[str, Any]) -> Path:
    return _write_text(path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def write_traces(out_dir: Path, traces: dict[int, list[TraceRecord]], n: int, m: int) -> list[Path]:
    """Write ``traces/rollout_<i>.csv`` for every rollout, in rollout order."""
    return [
        _write_text(Path(out_dir) / "traces" / f"rollout_{index}.csv", format_trace_csv(traces[index], n, m))
        for index in sorted(traces)
    ]


def write_summary(out_dir: Path, report: ViolationReport, config_hash: str) -> Path:
    return _write_json(Path(out_dir) / "summary.json", summary_dict(report, config_hash))


def write_sweep(out_dir: Path, rows: Sequence[SweepRow]) -> Path:
    return _write_text(Path(out_dir) / "sweep.csv", format_sweep_csv(rows))


@dataclass
class RunManifest:
    """Record of one CLI invocation."""

    config_hash: str
    tool_version: str
    command: str
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    wall_clock_s: float = 0.0
    outputs: list[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    return _write_json(Path(out_dir) / "manifest.json", manifest.to_dict())
