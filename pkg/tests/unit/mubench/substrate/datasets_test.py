"""Dataset loader unit tests."""
from pathlib import Path

import numpy as np
import pytest
import torch
from mubench.config import DatasetSplit
from mubench.domain import EmptyDatasetError
from mubench.substrate.datasets import concat_datasets, load_cifar10, load_csv, make_gaussian_mixture, save_csv

from tests.utilities import toy_data


def _write_cifar_batches(directory: Path, per_class: int) -> None:
    """Fake CIFAR-10 binary batches; the pixel value of each record encodes its label."""
    directory.mkdir(parents=True)
    labels = np.repeat(np.arange(10, dtype=np.uint8), per_class)
    records = np.zeros((len(labels), 1 + 3 * 32 * 32), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = (labels * 20)[:, None]
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        (directory / name).write_bytes(records.tobytes())


def test_gaussian_mixture_shapes_and_balance() -> None:
    """Test the generator layout."""
    train, test = make_gaussian_mixture(4, 10, 5, (1, 3, 3), seed=2)
    assert train.inputs.shape == (40, 1, 3, 3)
    assert test.inputs.shape == (20, 1, 3, 3)
    assert train.class_counts().tolist() == [10, 10, 10, 10]
    assert train.split == DatasetSplit.TRAIN
    assert test.split == DatasetSplit.TEST
    assert float(train.inputs.min()) >= 0.0
    assert float(train.inputs.max()) <= 1.0


def test_gaussian_mixture_is_seeded() -> None:
    """Test that the seed fixes the samples."""
    a, _ = make_gaussian_mixture(3, 5, 2, seed=1)
    b, _ = make_gaussian_mixture(3, 5, 2, seed=1)
    c, _ = make_gaussian_mixture(3, 5, 2, seed=2)
    assert torch.equal(a.inputs, b.inputs)
    assert not torch.equal(a.inputs, c.inputs)


def test_gaussian_mixture_rejects_one_class() -> None:
    """Test class count validation."""
    with pytest.raises(ValueError, match="num_classes"):
        make_gaussian_mixture(1, 5, 5)


def test_csv_keeps_samples(tmp_path: Path) -> None:
    """Test that a saved dataset reads back unchanged."""
    train, _ = toy_data()
    loaded = load_csv(save_csv(train, tmp_path / "train.csv"), train.num_classes)
    assert loaded.input_shape == train.input_shape
    assert torch.equal(loaded.labels, train.labels)
    assert torch.allclose(loaded.inputs, train.inputs, atol=1e-7)


def test_csv_rejects_missing_header(tmp_path: Path) -> None:
    """Test header validation."""
    path = tmp_path / "bad.csv"
    path.write_text("0,0.1,0.2\n")
    with pytest.raises(ValueError, match="header"):
        load_csv(path, 2)


def test_csv_rejects_wrong_row_width(tmp_path: Path) -> None:
    """Test that rows must match the declared shape."""
    path = tmp_path / "narrow.csv"
    path.write_text("label,1,2,2\n0,0.1,0.2,0.3\n")
    with pytest.raises(ValueError, match="needs 4"):
        load_csv(path, 2)


def test_csv_without_samples(tmp_path: Path) -> None:
    """Test that a header-only file is an empty dataset error."""
    path = tmp_path / "empty.csv"
    path.write_text("label,1,2,2\n")
    with pytest.raises(EmptyDatasetError):
        load_csv(path, 2)


def test_cifar10_per_class_subset(tmp_path: Path) -> None:
    """Test reading binary batches and the seeded per-class subset."""
    _write_cifar_batches(tmp_path / "cifar-10-batches-bin", per_class=2)
    full = load_cifar10(tmp_path, DatasetSplit.TEST)
    assert len(full) == 20
    subset = load_cifar10(tmp_path, DatasetSplit.TRAIN, per_class=3, seed=1)
    assert subset.inputs.shape == (30, 3, 32, 32)
    assert subset.class_counts().tolist() == [3] * 10
    expected = subset.labels.to(torch.float32) * 20 / 255.0
    assert torch.allclose(subset.inputs[:, 0, 0, 0], expected)


def test_cifar10_subset_too_large(tmp_path: Path) -> None:
    """Test that asking for more samples than a class holds fails."""
    _write_cifar_batches(tmp_path / "batches", per_class=1)
    with pytest.raises(ValueError, match="requested"):
        load_cifar10(tmp_path / "batches", DatasetSplit.TEST, per_class=2)


def test_cifar10_missing(tmp_path: Path) -> None:
    """Test the missing data error."""
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path / "nowhere")


def test_concat_rejects_mismatch() -> None:
    """Test concat validation."""
    a, _ = toy_data()
    b, _ = toy_data(num_classes=4)
    with pytest.raises(ValueError, match="disagree"):
        concat_datasets(a, b)
    assert len(concat_datasets(a, a)) == 2 * len(a)
