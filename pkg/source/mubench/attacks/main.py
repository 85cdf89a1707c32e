"""Poisoning generators and attack success measurement for depoisoning experiments."""

import logging as log

import numpy as np
import torch

from ..config import AsrConvention, PoisonKind
from ..domain import BudgetError, EmptyDatasetError, LabeledDataset, PoisonSpec
from ..substrate.inference import Classifier, evaluate, predict_labels
from ..support.seeding import numpy_rng


def flip_partner_map(pairs: tuple[tuple[int, int], ...], num_classes: int) -> dict[int, int]:
    """Class -> partner class. Pairs must be disjoint and name valid classes."""
    partner: dict[int, int] = {}
    for pair in pairs:
        if len(pair) != 2 or pair[0] == pair[1]:
            raise ValueError(f"flip pair {pair} must name two distinct classes")
        a, b = int(pair[0]), int(pair[1])
        for c in (a, b):
            if not 0 <= c < num_classes:
                raise ValueError(f"flip pair {pair} names class {c} outside [0, {num_classes})")
            if c in partner:
                raise ValueError(f"class {c} appears in more than one flip pair")
        partner[a], partner[b] = b, a
    return partner


def flip_labels(labels: torch.Tensor, indices: np.ndarray, partner: dict[int, int]) -> torch.Tensor:
    """Copy of `labels` with the selected entries mapped to their partner class."""
    out = labels.clone()
    for i in np.asarray(indices, dtype=np.int64):
        y = int(out[i])
        if y not in partner:
            raise ValueError(f"class {y} has no flip partner")
        out[i] = partner[y]
    return out


def _stratified_quota(budget: int, classes: list[int]) -> dict[int, int]:
    """budget / len(classes) per class; the remainder goes to the lowest class indices."""
    base, extra = divmod(budget, len(classes))
    return {c: base + (1 if i < extra else 0) for i, c in enumerate(classes)}


def apply_label_flip(dataset: LabeledDataset, spec: PoisonSpec) -> tuple[LabeledDataset, np.ndarray]:
    """Flip the labels of `spec.budget` samples, stratified evenly over the classes present in the dataset.

    Returns:
        The poisoned dataset (inputs untouched) and the sorted poisoned indices.
    """
    if spec.kind != PoisonKind.LABEL_FLIP:
        raise ValueError(f"apply_label_flip() needs a label_flip spec, got '{spec.kind.value}'")
    partner = flip_partner_map(spec.flip_pairs, dataset.num_classes)
    if spec.budget == 0:
        return dataset, np.zeros(0, dtype=np.int64)
    if spec.budget > len(dataset):
        raise BudgetError(f"poison budget {spec.budget} exceeds dataset size {len(dataset)}")

    counts = dataset.class_counts()
    present = [c for c in range(dataset.num_classes) if counts[c] > 0]
    unmatched = [c for c in present if c not in partner]
    if unmatched:
        raise ValueError(f"classes {unmatched} have no flip partner")

    rng = numpy_rng(spec.seed, "poison", "label_flip")
    chosen = []
    for c, quota in _stratified_quota(spec.budget, present).items():
        members = dataset.class_indices(c)
        if quota > len(members):
            raise BudgetError(f"class {c} has {len(members)} samples, {quota} flips requested")
        chosen.append(rng.choice(members, size=quota, replace=False))
    indices = np.sort(np.concatenate(chosen)).astype(np.int64)
    labels = flip_labels(dataset.labels, indices, partner)
    log.info("Flipped %d labels in '%s'", len(indices), dataset.name)
    return dataset.replace(labels=labels, name=f"{dataset.name}+label_flip{spec.budget}"), indices


def _trigger_window(spec: PoisonSpec, height: int, width: int) -> tuple[slice, slice]:
    size = spec.trigger_size
    if size > height or size > width:
        raise ValueError(f"trigger of size {size} does not fit a {height}x{width} image")
    rows = slice(height - size, height) if spec.trigger_location.value.startswith("bottom") else slice(0, size)
    cols = slice(width - size, width) if spec.trigger_location.value.endswith("right") else slice(0, size)
    return rows, cols


def stamp_trigger(inputs: torch.Tensor, spec: PoisonSpec) -> torch.Tensor:
    """Copy of a (N, C, H, W) batch with the solid trigger patch written into every channel."""
    rows, cols = _trigger_window(spec, inputs.shape[2], inputs.shape[3])
    out = inputs.clone()
    out[:, :, rows, cols] = spec.trigger_value
    return out


def apply_backdoor(dataset: LabeledDataset, spec: PoisonSpec) -> tuple[LabeledDataset, np.ndarray]:
    """Stamp the trigger on `spec.budget` uniformly chosen samples and relabel them to `spec.target_class`.

    Returns:
        The poisoned dataset and the sorted poisoned indices.
    """
    if spec.kind != PoisonKind.BACKDOOR:
        raise ValueError(f"apply_backdoor() needs a backdoor spec, got '{spec.kind.value}'")
    _, height, width = dataset.input_shape
    _trigger_window(spec, height, width)
    if not 0 <= spec.target_class < dataset.num_classes:
        raise ValueError(f"target class {spec.target_class} outside [0, {dataset.num_classes})")
    if spec.budget == 0:
        return dataset, np.zeros(0, dtype=np.int64)
    if spec.budget > len(dataset):
        raise BudgetError(f"poison budget {spec.budget} exceeds dataset size {len(dataset)}")

    rng = numpy_rng(spec.seed, "poison", "backdoor")
    indices = np.sort(rng.choice(len(dataset), size=spec.budget, replace=False)).astype(np.int64)
    idx = torch.as_tensor(indices)
    inputs = dataset.inputs.clone()
    inputs[idx] = stamp_trigger(dataset.inputs[idx], spec)
    labels = dataset.labels.clone()
    labels[idx] = spec.target_class
    log.info("Backdoored %d samples in '%s' (target class %d)", len(indices), dataset.name, spec.target_class)
    return dataset.replace(inputs=inputs, labels=labels, name=f"{dataset.name}+backdoor{spec.budget}"), indices


def apply_poison(dataset: LabeledDataset, spec: PoisonSpec) -> tuple[LabeledDataset, np.ndarray]:
    """Dispatch on `spec.kind`."""
    if spec.kind == PoisonKind.LABEL_FLIP:
        return apply_label_flip(dataset, spec)
    return apply_backdoor(dataset, spec)


def attack_success_rate(
    model: Classifier, clean_test: LabeledDataset, spec: PoisonSpec, convention: AsrConvention = AsrConvention.EXCLUSIVE
) -> float:
    """Percentage of triggered test inputs classified as the backdoor target.

    With the exclusive convention, test samples whose true label already is the target class are left out.
    """
    if spec.kind != PoisonKind.BACKDOOR:
        raise ValueError("attack success rate is defined for backdoor attacks only; use victim_class_accuracy()")
    labels = clean_test.labels.numpy()
    keep = np.flatnonzero(labels != spec.target_class) if convention == AsrConvention.EXCLUSIVE else np.arange(len(labels))
    if len(keep) == 0:
        raise EmptyDatasetError("no test samples left to trigger")
    triggered = stamp_trigger(clean_test.inputs[torch.as_tensor(keep)], spec)
    hits = int((predict_labels(model, triggered) == spec.target_class).sum())
    return 100.0 * hits / len(keep)


def victim_class_accuracy(model: Classifier, clean_test: LabeledDataset, class_id: int) -> float:
    """Clean test accuracy restricted to one class, the readout for label-flip poisoning."""
    members = clean_test.class_indices(class_id)
    if len(members) == 0:
        raise EmptyDatasetError(f"test set has no samples of class {class_id}")
    return evaluate(model, clean_test.subset(members, name=f"{clean_test.name}:c{class_id}"))
