"""Functions for utilising storage.

Results directory layout::

    <out>/manifest.json
    <out>/results.csv
    <out>/results.jsonl
    <out>/plots/
    <out>/artifacts/<method>/<cell>/
    <out>/artifacts/_models/
"""

import logging as log
import os
import re
from enum import Enum
from pathlib import Path
from typing import Optional

from ..config import DEFAULT_DATA_DIR, ENV_VAR_MUBENCH_DATA


class _StoreDir(Enum):
    """Storage directories below the output root."""

    ARTIFACTS = "artifacts"
    PLOTS = "plots"
    MODELS = "_models"


class _StoreFilename(Enum):
    """Files at the output root."""

    MANIFEST = "manifest.json"
    RESULTS_CSV = "results.csv"
    RESULTS_JSONL = "results.jsonl"


_UNSAFE = re.compile(r"[^A-Za-z0-9_.=-]+")


def resolve_output_dir(out: Optional[str | Path] = None) -> Path:
    """The output root: explicit value, else `MUBENCH_DATA`, else `_runs`."""
    root = Path(out) if out else Path(os.environ.get(ENV_VAR_MUBENCH_DATA, DEFAULT_DATA_DIR))
    root.mkdir(parents=True, exist_ok=True)
    return root


def _get_path(root: Path, *parts: str, filename: Optional[str] = None) -> Path:
    """Build (and create) a directory below the output root, optionally returning a file inside it.

    Using this function directly should be avoided. Use the wrappers below.
    """
    dir_ = root.joinpath(*parts)
    dir_.mkdir(parents=True, exist_ok=True)
    if filename:
        file_ = dir_ / filename
        log.debug("File: %s", file_)
        return file_
    log.debug("Dir: %s", dir_)
    return dir_


def safe_name(text: str) -> str:
    """Filesystem safe version of a descriptor like `one_class:c0`."""
    return _UNSAFE.sub("_", text).strip("_") or "_"


def cell_dirname(scenario: str, budget: int, seed: int) -> str:
    """Directory name for one matrix cell."""
    return safe_name(f"{scenario}-b{budget}-s{seed}")


def get_manifest_file(root: Path) -> Path:
    """Run manifest."""
    return _get_path(root, filename=_StoreFilename.MANIFEST.value)


def get_results_csv(root: Path) -> Path:
    """CSV results table."""
    return _get_path(root, filename=_StoreFilename.RESULTS_CSV.value)


def get_results_jsonl(root: Path) -> Path:
    """JSON lines results table."""
    return _get_path(root, filename=_StoreFilename.RESULTS_JSONL.value)


def get_plots_dir(root: Path) -> Path:
    """Where plots and their CSV twins go."""
    return _get_path(root, _StoreDir.PLOTS.value)


def get_artifact_dir(root: Path, method_id: str, cell: str) -> Path:
    """Per method, per cell artifact store. Everything an unlearner writes lands here."""
    return _get_path(root, _StoreDir.ARTIFACTS.value, safe_name(method_id), cell)


def get_models_dir(root: Path) -> Path:
    """Cached original, poisoned and retrained model checkpoints."""
    return _get_path(root, _StoreDir.ARTIFACTS.value, _StoreDir.MODELS.value)


def dir_size_bytes(path: Path) -> int:
    """Total size of the regular files below `path`."""
    if not path.exists():
        return 0
    if path.is_file():
        return path.stat().st_size
    return sum(p.stat().st_size for p in path.rglob("*") if p.is_file())
