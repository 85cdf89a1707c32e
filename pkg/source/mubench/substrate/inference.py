"""Forward-only evaluation: logits, probabilities, accuracy and per-sample losses.

Functions accept either a single `ModelState` or a `SisaEnsemble`. Ensemble probabilities are the mean of the
shard softmaxes; ensemble labels are the majority vote over shard argmaxes.
"""

import logging as log

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812

from ..domain import EmptyDatasetError, LabeledDataset, ModelState, SisaEnsemble
from .networks import check_inputs, forward

Classifier = ModelState | SisaEnsemble

_EVAL_BATCH = 1024


@torch.no_grad()
def logits(model: ModelState, inputs: torch.Tensor, batch_size: int = _EVAL_BATCH) -> torch.Tensor:
    """Logits for a (N, C, H, W) batch, computed in chunks."""
    check_inputs(model.arch, inputs)
    if len(inputs) == 0:
        return torch.zeros(0, model.arch.num_classes, dtype=model.params.dtype)
    return torch.cat(
        [forward(model.arch, model.params, inputs[i : i + batch_size]) for i in range(0, len(inputs), batch_size)]
    )


def majority_vote(predictions: np.ndarray, num_classes: int) -> np.ndarray:
    """Per column, the most frequent label across rows. Ties go to the lowest class index.

    Args:
        predictions: int array of shape (num_voters, N).
        num_classes: Number of classes.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    counts = np.zeros((predictions.shape[1], num_classes), dtype=np.int64)
    for row in predictions:
        counts[np.arange(len(row)), row] += 1
    return counts.argmax(axis=1)


def probabilities(model: Classifier, inputs: torch.Tensor) -> torch.Tensor:
    """Softmax outputs, shape (N, num_classes)."""
    if isinstance(model, SisaEnsemble):
        return torch.stack([probabilities(shard, inputs) for shard in model.shard_models]).mean(dim=0)
    return torch.softmax(logits(model, inputs).to(torch.float64), dim=1)


def predict_labels(model: Classifier, inputs: torch.Tensor) -> np.ndarray:
    """Predicted classes; argmax ties broken by the lowest class index."""
    if isinstance(model, SisaEnsemble):
        votes = np.stack([predict_labels(shard, inputs) for shard in model.shard_models])
        return majority_vote(votes, model.num_classes)
    # torch.argmax returns the first maximal index
    return logits(model, inputs).argmax(dim=1).numpy()


def predict_proba(model: Classifier, input_: torch.Tensor) -> np.ndarray:
    """Probability vector for one input (C, H, W), or a matrix for a batch."""
    single = input_.dim() == 3
    probs = probabilities(model, input_.unsqueeze(0) if single else input_).numpy()
    return probs[0] if single else probs


def evaluate(model: Classifier, dataset: LabeledDataset) -> float:
    """Accuracy percentage, 100 * correct / N."""
    if len(dataset) == 0:
        raise EmptyDatasetError(f"cannot evaluate on empty dataset '{dataset.name}'")
    correct = int((predict_labels(model, dataset.inputs) == dataset.labels.numpy()).sum())
    accuracy = 100.0 * correct / len(dataset)
    log.debug("evaluate() - %s: %d/%d = %.2f", dataset.name, correct, len(dataset), accuracy)
    return accuracy


@torch.no_grad()
def per_sample_loss(model: ModelState, dataset: LabeledDataset) -> np.ndarray:
    """Cross-entropy per sample, aligned with dataset indices."""
    if len(dataset) == 0:
        raise EmptyDatasetError(f"cannot compute losses on empty dataset '{dataset.name}'")
    out = F.cross_entropy(logits(model, dataset.inputs).to(torch.float64), dataset.labels, reduction="none")
    return out.clamp_min(0.0).numpy()
