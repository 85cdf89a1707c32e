"""Utility, forgetting, membership inference and cost metrics."""

from .main import cost_metrics, forgetting_accuracy, l2_distance, utility_metrics
from .mia import mia_efficacy, mia_features, mia_suite, train_mia_predictor

__all__ = [
    "cost_metrics",
    "forgetting_accuracy",
    "l2_distance",
    "mia_efficacy",
    "mia_features",
    "mia_suite",
    "train_mia_predictor",
    "utility_metrics",
]
