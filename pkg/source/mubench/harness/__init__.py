"""Experiment harness: config, matrix runner, results store, reports and the CLI."""

from .main import run_experiment, train_originals
from .models import ExperimentConfig, load_config
from .report import emit_budget_plot, emit_depoison_plot, emit_table
from .results import ResultsStore

__all__ = [
    "ExperimentConfig",
    "ResultsStore",
    "emit_budget_plot",
    "emit_depoison_plot",
    "emit_table",
    "load_config",
    "run_experiment",
    "train_originals",
]
