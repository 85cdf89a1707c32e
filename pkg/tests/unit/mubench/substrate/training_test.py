"""Training unit tests."""
import dataclasses
import json
import math
from pathlib import Path

import pytest
import torch
from mubench.config import ArchKind, LrSchedule
from mubench.domain import TrainingDivergedError
from mubench.substrate.checkpoint import load_checkpoint
from mubench.substrate.inference import evaluate
from mubench.substrate.networks import init_model
from mubench.substrate.training import UpdateRecorder, dataset_batches, epoch_lr, fine_tune, optimise, train

from tests.utilities import toy_arch, toy_config, toy_data, trained_model


def test_epoch_lr() -> None:
    """Test the learning rate schedules."""
    assert epoch_lr(0.1, 3, 10, LrSchedule.CONSTANT) == 0.1
    assert epoch_lr(0.1, 0, 10, LrSchedule.COSINE) == pytest.approx(0.1)
    assert epoch_lr(0.1, 5, 10, LrSchedule.COSINE) == pytest.approx(0.05)
    assert epoch_lr(0.1, 9, 10, LrSchedule.COSINE) == pytest.approx(0.05 * (1 + math.cos(0.9 * math.pi)))


@pytest.mark.parametrize("kind", list(ArchKind))
def test_train_is_deterministic(kind: ArchKind) -> None:
    """Test that training is a pure function of data, config and seed."""
    train_set, _ = toy_data()
    a = trained_model(train_set, kind, epochs=2)
    b = trained_model(train_set, kind, epochs=2)
    assert torch.equal(a.params, b.params)
    assert a.trained_on == train_set.fingerprint()
    assert a.train_accuracy == b.train_accuracy


def test_train_learns_separable_data() -> None:
    """Test that the toy data is learnt."""
    train_set, test_set = toy_data()
    model = trained_model(train_set, ArchKind.LOGISTIC, epochs=5)
    assert evaluate(model, test_set) > 80.0


def test_resume_matches_uninterrupted(tmp_path: Path) -> None:
    """Test that resuming from a checkpoint reproduces the full run."""
    train_set, _ = toy_data()
    config = dataclasses.replace(toy_config(toy_arch(ArchKind.MLP), epochs=4), schedule=LrSchedule.COSINE)
    full = train(train_set, config, checkpoint_dir=tmp_path, checkpoint_every=2)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch-2.ckpt", "epoch-4.ckpt"]
    halfway = load_checkpoint(tmp_path / "epoch-2.ckpt")
    assert halfway.epoch == 2
    assert halfway.optimizer_state.numel() == config.arch.param_count()
    resumed = train(train_set, config, resume=halfway)
    assert torch.allclose(resumed.params, full.params, atol=1e-6, rtol=0.0)


def test_train_rejects_test_split() -> None:
    """Test split validation."""
    _, test_set = toy_data()
    with pytest.raises(ValueError, match="train split"):
        train(test_set, toy_config(toy_arch()))


def test_train_rejects_class_mismatch() -> None:
    """Test that dataset and architecture must agree on the class count."""
    train_set, _ = toy_data(num_classes=4)
    with pytest.raises(ValueError, match="classes"):
        train(train_set, toy_config(toy_arch()))


def test_train_needs_an_epoch() -> None:
    """Test that a training run is at least one epoch long."""
    config = toy_config(toy_arch(), epochs=1)
    assert train(toy_data()[0], config).epochs == 1
    with pytest.raises(ValueError, match="epochs"):
        dataclasses.replace(config, epochs=0)


def test_grad_mask_holds_entries_fixed() -> None:
    """Test that masked entries never move, weight decay included."""
    train_set, _ = toy_data()
    arch = toy_arch()
    start = init_model(arch, 0).params
    mask = torch.zeros(arch.param_count())
    mask[::2] = 1.0

    def loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        return torch.nn.functional.cross_entropy(x.flatten(1) @ params[: 64 * 3].view(3, 64).T, y)

    out = optimise(start, dataset_batches(train_set, 8, 0), loss, epochs=2, lr=0.1, weight_decay=0.1, grad_mask=mask)
    assert torch.equal(out.params[1::2], start[1::2])
    assert not torch.equal(out.params[::2], start[::2])


def test_non_finite_loss_raises() -> None:
    """Test divergence detection."""
    train_set, _ = toy_data()

    def loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        return params.sum() * float("nan")

    with pytest.raises(TrainingDivergedError):
        optimise(torch.zeros(4), dataset_batches(train_set, 8, 0), loss, epochs=1, lr=0.1)


def test_batches_cover_dataset_once_per_epoch() -> None:
    """Test the batch factory."""
    train_set, _ = toy_data()
    batches = dataset_batches(train_set, 5, seed=3)
    seen = torch.cat([idx for idx, _, _ in batches(0)])
    assert sorted(seen.tolist()) == list(range(len(train_set)))
    again = torch.cat([idx for idx, _, _ in batches(0)])
    assert torch.equal(seen, again)
    assert not torch.equal(seen, torch.cat([idx for idx, _, _ in batches(1)]))


def test_update_recorder_watches_samples(tmp_path: Path) -> None:
    """Test that only batches touching the watch set are recorded."""
    train_set, _ = toy_data()
    config = toy_config(toy_arch(), epochs=2)
    recorder = UpdateRecorder(tmp_path / "log", watch=[0])
    train(train_set, config, recorder=recorder)
    index = json.loads((tmp_path / "log" / UpdateRecorder.INDEX).read_text())
    assert index["watch"] == [0]
    assert len(index["entries"]) == 2
    assert all(0 in entry["indices"] for entry in index["entries"])
    size = (tmp_path / "log" / UpdateRecorder.BIN).stat().st_size
    assert size == 4 * config.arch.param_count() * 2


def test_fine_tune_zero_epochs_is_identity() -> None:
    """Test the fine-tune no-op."""
    train_set, _ = toy_data()
    model = trained_model(train_set)
    assert fine_tune(model, train_set, epochs=0, lr=0.1, batch_size=8, seed=0, stream="ft") is model
    tuned = fine_tune(model, train_set, epochs=1, lr=0.1, batch_size=8, seed=0, stream="ft")
    assert not torch.equal(tuned.params, model.params)
    assert tuned.arch == model.arch
