"""Inference unit tests."""
import itertools
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import torch
from mubench.domain import EmptyDatasetError, SisaEnsemble
from mubench.substrate.inference import evaluate, majority_vote, per_sample_loss, predict_labels, predict_proba, probabilities
from mubench.substrate.networks import init_model

from tests.utilities import INPUT_SHAPE, labeled, toy_arch, toy_config, toy_data, trained_model


def _brute_force_vote(column: tuple[int, ...]) -> int:
    counts = Counter(column)
    best = max(counts.values())
    return min(label for label, count in counts.items() if count == best)


def test_majority_vote_matches_brute_force() -> None:
    """Test every vote of 4 voters over 3 classes, ties going to the lowest class."""
    columns = list(itertools.product(range(3), repeat=4))
    votes = np.array(columns).T
    expected = [_brute_force_vote(column) for column in columns]
    assert majority_vote(votes, 3).tolist() == expected


def test_evaluate_counts_correct() -> None:
    """Test accuracy as a percentage."""
    train_set, _ = toy_data()
    model = trained_model(train_set)
    predicted = predict_labels(model, train_set.inputs)
    expected = 100.0 * float((predicted == train_set.labels.numpy()).mean())
    assert evaluate(model, train_set) == pytest.approx(expected)


def test_evaluate_empty_raises() -> None:
    """Test the empty dataset."""
    with pytest.raises(EmptyDatasetError):
        evaluate(init_model(toy_arch(), 0), labeled(torch.zeros(0, *INPUT_SHAPE), []))


def test_predict_proba_single_and_batch() -> None:
    """Test single-input and batch probabilities."""
    model = init_model(toy_arch(), 0)
    inputs = torch.rand(4, *INPUT_SHAPE)
    single = predict_proba(model, inputs[0])
    batch = predict_proba(model, inputs)
    assert single.shape == (3,)
    assert batch.shape == (4, 3)
    assert np.allclose(batch.sum(axis=1), 1.0)
    assert np.allclose(single, batch[0])


def test_ensemble_averages_and_votes(tmp_path: Path) -> None:
    """Test SISA ensemble probabilities and labels."""
    train_set, _ = toy_data()
    shards = tuple(init_model(toy_arch(), seed) for seed in range(3))
    ensemble = SisaEnsemble(
        shard_models=shards,
        shard_indices=tuple(np.arange(i, len(train_set), 3) for i in range(3)),
        slice_bounds=((12,), (12,), (12,)),
        checkpoint_dir=tmp_path,
        config=toy_config(toy_arch()),
        seed=0,
    )
    inputs = train_set.inputs[:5]
    expected = torch.stack([probabilities(shard, inputs) for shard in shards]).mean(dim=0)
    assert torch.allclose(probabilities(ensemble, inputs), expected)
    votes = np.stack([predict_labels(shard, inputs) for shard in shards])
    assert predict_labels(ensemble, inputs).tolist() == majority_vote(votes, 3).tolist()
    assert ensemble.shard_of(4) == 1


def test_per_sample_loss_is_non_negative() -> None:
    """Test per-sample cross-entropy."""
    train_set, _ = toy_data()
    losses = per_sample_loss(trained_model(train_set), train_set)
    assert losses.shape == (len(train_set),)
    assert (losses >= 0).all()
