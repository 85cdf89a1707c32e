"""Data loading, functional networks, training, evaluation and checkpointing."""

from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .inference import evaluate, per_sample_loss, predict_labels, predict_proba
from .networks import init_model
from .training import fine_tune, train

__all__ = [
    "evaluate",
    "fine_tune",
    "init_model",
    "load_checkpoint",
    "load_model",
    "per_sample_loss",
    "predict_labels",
    "predict_proba",
    "save_checkpoint",
    "save_model",
    "train",
]
