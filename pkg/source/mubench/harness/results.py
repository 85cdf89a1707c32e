"""Append-only results store: `results.csv` and `results.jsonl` rows plus a run manifest.

Only the process that owns the store writes to it. Worker processes hand their rows back to that process.
"""

import json
import logging as log
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import pandas as pd
from pydantic import TypeAdapter

import mubench

from ..config import MiaFeatureKind
from ..domain import MetricsReport
from ..support.store import get_manifest_file, get_results_csv, get_results_jsonl, resolve_output_dir

MIA_COLUMNS = [f"mia_{kind.value}" for kind in MiaFeatureKind]

CSV_COLUMNS = [
    "method_id",
    "scenario",
    "scenario_kind",
    "budget",
    "seed",
    "status",
    "target_class",
    "ta",
    "ra",
    "fa_raw",
    "fa_disc",
    *MIA_COLUMNS,
    "l2",
    "rte_ratio",
    "wall_seconds",
    "storage_bytes",
    "asr",
    "victim_accuracy",
    "hyperparams",
    "warnings",
    "error",
    "config_hash",
    "duplicate",
]

_REPORT = TypeAdapter(MetricsReport)


def report_to_dict(report: MetricsReport) -> dict:
    """JSON friendly row."""
    return _REPORT.dump_python(report, mode="json")


def report_from_dict(data: dict) -> MetricsReport:
    """Inverse of `report_to_dict()`."""
    return _REPORT.validate_python(data)


def csv_row(report: MetricsReport) -> dict:
    """Flat row in `CSV_COLUMNS` order. Nested fields are JSON encoded."""
    data = report_to_dict(report)
    mia = data.pop("mia")
    data["hyperparams"] = json.dumps(data["hyperparams"], sort_keys=True)
    data["warnings"] = json.dumps(data["warnings"])
    for kind in MiaFeatureKind:
        data[f"mia_{kind.value}"] = mia.get(kind.value)
    return {column: data.get(column) for column in CSV_COLUMNS}


class ResultsStore:
    """Results of one output directory.

    Rows are keyed by (method, scenario, budget, seed). Appending a row whose key was already written under the same
    config hash flags it `duplicate` instead of replacing the earlier row.
    """

    def __init__(self: Self, out: Optional[Path | str] = None) -> None:
        """Open (or create) the store below `out`."""
        self.root = resolve_output_dir(out)
        self.csv_file = get_results_csv(self.root)
        self.jsonl_file = get_results_jsonl(self.root)
        self.manifest_file = get_manifest_file(self.root)
        self._seen = {(r.key, r.config_hash) for r in self.rows()}

    def __len__(self: Self) -> int:
        """Number of stored rows."""
        return len(self.rows())

    def write_manifest(self: Self, config_hash: str, config: dict) -> dict:
        """Record a run of `config`. The manifest keeps every run that wrote to this directory."""
        manifest = self.manifest()
        runs = manifest.get("runs", [])
        runs.append({"config_hash": config_hash, "started": datetime.now(timezone.utc).isoformat()})
        manifest = {
            "code_version": mubench.__version_str__,
            "config_hash": config_hash,
            "config": config,
            "runs": runs,
        }
        self.manifest_file.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        log.debug("Manifest written to '%s'", self.manifest_file)
        return manifest

    def manifest(self: Self) -> dict:
        """The manifest, or an empty dict before the first run."""
        if not self.manifest_file.exists():
            return {}
        return json.loads(self.manifest_file.read_text(encoding="utf-8"))

    def append(self: Self, report: MetricsReport) -> MetricsReport:
        """Append one row to both tables. Returns the row as stored."""
        if (report.key, report.config_hash) in self._seen and not report.duplicate:
            log.info("Row %s already stored for config %s, appending it as a duplicate", report.key, report.config_hash[:12])
            report = report_from_dict({**report_to_dict(report), "duplicate": True})
        self._seen.add((report.key, report.config_hash))
        with open(self.jsonl_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(report_to_dict(report), sort_keys=True) + "\n")
        write_header = not self.csv_file.exists() or self.csv_file.stat().st_size == 0
        pd.DataFrame([csv_row(report)], columns=CSV_COLUMNS).to_csv(
            self.csv_file, mode="a", header=write_header, index=False
        )
        return report

    def rows(self: Self) -> list[MetricsReport]:
        """All rows in append order."""
        if not self.jsonl_file.exists():
            return []
        with open(self.jsonl_file, encoding="utf-8") as f:
            return [report_from_dict(json.loads(line)) for line in f if line.strip()]

    def frame(self: Self) -> pd.DataFrame:
        """`results.csv` as a DataFrame with the fixed column order."""
        if not self.csv_file.exists() or self.csv_file.stat().st_size == 0:
            return pd.DataFrame(columns=CSV_COLUMNS)
        return pd.read_csv(self.csv_file)[CSV_COLUMNS]

    def scenarios(self: Self) -> list[str]:
        """Scenario descriptors in first-seen order."""
        return list(dict.fromkeys(r.scenario for r in self.rows()))
