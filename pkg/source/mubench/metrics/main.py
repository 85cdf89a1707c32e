"""Utility, forgetting and cost metrics."""

import logging as log
import math
from typing import Optional

import torch

from ..domain import EmptyDatasetError, LabeledDataset, MissingReferenceError, UnlearnResult
from ..substrate.inference import Classifier, evaluate


def utility_metrics(model: Classifier, retain: LabeledDataset, test: LabeledDataset) -> tuple[float, float]:
    """(TA, RA): accuracy on the test split and on the retain set, in percent."""
    return evaluate(model, test), evaluate(model, retain)


def forgetting_accuracy(
    model: Classifier, forget: LabeledDataset, retrain_reference: Optional[Classifier]
) -> tuple[float, float]:
    """(FA_raw, FA_disc): accuracy on D_f, and its signed difference to the retrained model's accuracy on D_f.

    Raises:
        MissingReferenceError: no retrained model was given.
        EmptyDatasetError: D_f is empty.
    """
    if retrain_reference is None:
        raise MissingReferenceError("forgetting accuracy needs the retrained reference model")
    if len(forget) == 0:
        raise EmptyDatasetError("empty dataset: the forget set is empty")
    raw = evaluate(model, forget)
    return raw, raw - evaluate(retrain_reference, forget)


def l2_distance(a: torch.Tensor, b: torch.Tensor, reference: torch.Tensor) -> float:
    """‖a − b‖₂ / ‖reference‖₂, where the reference is the retrained model's parameter vector."""
    if a.numel() != b.numel() or a.numel() != reference.numel():
        raise ValueError(f"parameter vectors differ in length: {a.numel()}, {b.numel()}, {reference.numel()}")
    norm = float(torch.linalg.vector_norm(reference.to(torch.float64)))
    if norm == 0:
        raise ValueError("the reference parameter vector has zero norm")
    return float(torch.linalg.vector_norm(a.to(torch.float64) - b.to(torch.float64))) / norm


def cost_metrics(result: UnlearnResult, retrain_result: UnlearnResult) -> tuple[float, int]:
    """(RTE ratio, storage bytes): wall time relative to retraining, and the bytes the method persisted."""
    if retrain_result.wall_seconds <= 0 or not math.isfinite(retrain_result.wall_seconds):
        raise ValueError(f"retrain wall time must be positive, got {retrain_result.wall_seconds}")
    ratio = result.wall_seconds / retrain_result.wall_seconds
    log.debug("cost_metrics() - %s: %.4fx retrain, %d bytes", result.method_id, ratio, result.aux_storage_bytes)
    return ratio, result.aux_storage_bytes
