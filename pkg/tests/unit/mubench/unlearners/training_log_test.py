"""Unrolling and Amnesiac unit tests."""
from pathlib import Path

import numpy as np
import pytest
import torch
from mubench.domain import MissingTrainingLogError
from mubench.substrate.autodiff import loss_gradient
from mubench.substrate.networks import init_model
from mubench.substrate.training import train
from mubench.unlearners.training_log import amnesiac_record, amnesiac_remove, read_update_log, unrolling_add_back

from tests.utilities import toy_arch, toy_config, toy_data


def test_recording_keeps_the_trajectory(tmp_path: Path) -> None:
    """Test that logging updates does not change training."""
    train_set, _ = toy_data()
    config = toy_config(toy_arch(), epochs=2)
    recorded, training_log = amnesiac_record(train_set, config, tmp_path / "log")
    assert torch.equal(recorded.params, train(train_set, config).params)
    assert torch.equal(training_log.initial.params, init_model(config.arch, config.seed).params)


def test_removing_every_batch_returns_to_initial_weights(tmp_path: Path) -> None:
    """Test θ_T − ΣΔθ over all batches = θ_0."""
    train_set, _ = toy_data()
    config = toy_config(toy_arch(), epochs=2)
    model, training_log = amnesiac_record(train_set, config, tmp_path / "log")
    restored, removed = amnesiac_remove(model, training_log.updates_dir, np.arange(len(train_set)))
    assert removed == 2 * 5
    assert torch.allclose(restored.params, training_log.initial.params, atol=1e-5)


def test_removal_only_counts_forget_batches(tmp_path: Path) -> None:
    """Test the batch selection against the index."""
    train_set, _ = toy_data()
    model, training_log = amnesiac_record(train_set, toy_config(toy_arch(), epochs=2), tmp_path / "log")
    _, entries, _ = read_update_log(training_log.updates_dir, model.arch.param_count())
    expected = sum(1 for e in entries if {3, 4} & set(e["indices"]))
    _, removed = amnesiac_remove(model, training_log.updates_dir, np.array([3, 4]))
    assert removed == expected


def test_watch_set_must_cover_forget_set(tmp_path: Path) -> None:
    """Test that a narrow log cannot serve a wider forget set."""
    train_set, _ = toy_data()
    model, training_log = amnesiac_record(train_set, toy_config(toy_arch()), tmp_path / "log", watch=np.array([1]))
    with pytest.raises(MissingTrainingLogError, match="watch"):
        amnesiac_remove(model, training_log.updates_dir, np.array([1, 2]))


def test_missing_log(tmp_path: Path) -> None:
    """Test an empty log directory."""
    with pytest.raises(MissingTrainingLogError):
        read_update_log(tmp_path, 10)


def test_unrolling_add_back() -> None:
    """Test θ_T + lr·Σ∇ℓ(z; θ_0)."""
    train_set, _ = toy_data()
    arch = toy_arch()
    initial, final = init_model(arch, 0), init_model(arch, 1)
    forget = np.array([0, 5])
    out = unrolling_add_back(final, initial, train_set, forget, 0.1)
    assert torch.allclose(out.params, final.params + 0.1 * loss_gradient(initial, train_set, forget))
    assert torch.equal(unrolling_add_back(final, initial, train_set, np.array([], dtype=np.int64), 0.1).params, final.params)
