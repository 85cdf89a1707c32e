"""Dataset loaders: CIFAR-10 binary batches, a Gaussian-mixture generator, and a CSV-of-floats format.

CSV layout: one sample per row, the label in the first column followed by the flattened C*H*W input values. A
header row `label,c,h,w` names the per-sample shape, e.g. `label,3,32,32`.
"""

import logging as log
import os
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch

from ..config import ENV_VAR_MUBENCH_CIFAR10_DIR, DatasetSplit
from ..domain import EmptyDatasetError, LabeledDataset
from ..support.seeding import numpy_rng

CIFAR10_CLASSES = 10
_CIFAR10_SHAPE = (3, 32, 32)
_CIFAR10_RECORD = 1 + 3 * 32 * 32
_CIFAR10_FILES = {
    DatasetSplit.TRAIN: [f"data_batch_{i}.bin" for i in range(1, 6)],
    DatasetSplit.TEST: ["test_batch.bin"],
}


def _cifar10_root(root: Optional[Path | str]) -> Path:
    base = Path(root) if root else Path(os.environ.get(ENV_VAR_MUBENCH_CIFAR10_DIR, "data/cifar-10-batches-bin"))
    nested = base / "cifar-10-batches-bin"
    return nested if nested.is_dir() else base


def _per_class_subset(labels: np.ndarray, per_class: int, num_classes: int, seed: int, split: DatasetSplit) -> np.ndarray:
    rng = numpy_rng(seed, "subset", split.value)
    keep = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if per_class > len(members):
            raise ValueError(f"class {c} has {len(members)} samples, {per_class} requested")
        keep.append(np.sort(rng.choice(members, size=per_class, replace=False)))
    return np.sort(np.concatenate(keep))


def load_cifar10(
    root: Optional[Path | str] = None, split: DatasetSplit = DatasetSplit.TRAIN, per_class: Optional[int] = None, seed: int = 0
) -> LabeledDataset:
    """Read CIFAR-10 from the binary batch files. Pixel values are scaled to [0, 1].

    Args:
        root: Directory holding `data_batch_*.bin` and `test_batch.bin`; defaults to `MUBENCH_CIFAR10_DIR`.
        split: Which split to load.
        per_class: When given, keep a seeded per-class subset of this size (desk scale uses 500 train / 100 test).
        seed: Subset seed.
    """
    directory = _cifar10_root(root)
    chunks = []
    for filename in _CIFAR10_FILES[split]:
        path = directory / filename
        if not path.exists():
            raise FileNotFoundError(f"CIFAR-10 batch '{path}' not found. Set {ENV_VAR_MUBENCH_CIFAR10_DIR}.")
        raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
        if raw.size % _CIFAR10_RECORD:
            raise ValueError(f"'{path}' is not a CIFAR-10 binary batch (size {raw.size})")
        chunks.append(raw.reshape(-1, _CIFAR10_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    if per_class is not None:
        keep = _per_class_subset(labels, per_class, CIFAR10_CLASSES, seed, split)
        records, labels = records[keep], labels[keep]
    inputs = torch.from_numpy(records[:, 1:].reshape(-1, *_CIFAR10_SHAPE).astype(np.float32) / 255.0)
    log.info("Loaded CIFAR-10 %s split from '%s': %d samples", split.value, directory, len(labels))
    return LabeledDataset(f"cifar10-{split.value}", inputs, torch.from_numpy(labels), CIFAR10_CLASSES, split)


def make_gaussian_mixture(
    num_classes: int,
    per_class_train: int,
    per_class_test: int,
    input_shape: tuple[int, int, int] = (1, 4, 4),
    *,
    spread: float = 0.35,
    noise: float = 0.1,
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Synthetic train/test pair: one Gaussian blob per class, both splits drawn around the same means.

    Means lie in [0.5 - spread, 0.5 + spread]; values are clipped to [0, 1].
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    dim = int(np.prod(input_shape))
    means = numpy_rng(seed, "mixture", "means").uniform(0.5 - spread, 0.5 + spread, size=(num_classes, dim))

    def draw(per_class: int, split: DatasetSplit) -> LabeledDataset:
        rng = numpy_rng(seed, "mixture", split.value)
        labels = np.repeat(np.arange(num_classes), per_class)
        values = means[labels] + rng.normal(0.0, noise, size=(len(labels), dim))
        inputs = torch.from_numpy(np.clip(values, 0.0, 1.0).astype(np.float32).reshape(-1, *input_shape))
        return LabeledDataset(f"mixture-{split.value}", inputs, torch.from_numpy(labels.astype(np.int64)), num_classes, split)

    return draw(per_class_train, DatasetSplit.TRAIN), draw(per_class_test, DatasetSplit.TEST)


def load_csv(path: Path | str, num_classes: int, split: DatasetSplit = DatasetSplit.TRAIN) -> LabeledDataset:
    """Read a dataset written by `save_csv()`."""
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip().split(",")
    if len(header) != 4 or header[0] != "label":
        raise ValueError(f"'{path}' does not start with a `label,c,h,w` header")
    shape = tuple(int(v) for v in header[1:])
    try:
        data = pd.read_csv(path, skiprows=1, header=None, dtype=np.float64).to_numpy()
    except pd.errors.EmptyDataError as e:
        raise EmptyDatasetError(f"'{path}' holds no samples") from e
    if data.shape[1] != 1 + int(np.prod(shape)):
        raise ValueError(f"'{path}' rows have {data.shape[1] - 1} values, shape {shape} needs {int(np.prod(shape))}")
    labels = torch.from_numpy(data[:, 0].astype(np.int64))
    inputs = torch.from_numpy(data[:, 1:].astype(np.float32).reshape(-1, *shape))
    log.info("Loaded '%s': %d samples of shape %s", path, len(labels), shape)
    return LabeledDataset(path.stem, inputs, labels, num_classes, split)


def save_csv(dataset: LabeledDataset, path: Path | str) -> Path:
    """Write a dataset as label plus flattened input values per row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    c, h, w = dataset.input_shape
    rows = np.column_stack([dataset.labels.numpy().astype(np.float64), dataset.inputs.reshape(len(dataset), -1).numpy()])
    with open(path, "w") as f:
        f.write(f"label,{c},{h},{w}\n")
        np.savetxt(f, rows, delimiter=",", fmt="%.9g")
    return path


def concat_datasets(first: LabeledDataset, second: LabeledDataset, name: Optional[str] = None) -> LabeledDataset:
    """Samples of `first` followed by those of `second`."""
    if first.input_shape != second.input_shape or first.num_classes != second.num_classes:
        raise ValueError("datasets disagree on input shape or class count")
    return LabeledDataset(
        name or f"{first.name}+{second.name}",
        torch.cat([first.inputs, second.inputs]),
        torch.cat([first.labels, second.labels]),
        first.num_classes,
        first.split,
    )
