"""Utility, forgetting and cost metric unit tests."""
import numpy as np
import pytest
import torch
from mubench.domain import EmptyDatasetError, MissingReferenceError, ModelState, UnlearnResult
from mubench.metrics import cost_metrics, forgetting_accuracy, l2_distance, utility_metrics

from tests.utilities import INPUT_SHAPE, labeled, toy_arch


def constant_model(class_id: int) -> ModelState:
    """Logistic model predicting `class_id` for every input."""
    arch = toy_arch()
    bias = torch.zeros(3)
    bias[class_id] = 1.0
    return ModelState.from_tensors(arch, {"head.weight": torch.zeros(3, 64), "head.bias": bias}, seed=0, trained_on="", epochs=0)


def _result(seconds: float, storage: int = 0) -> UnlearnResult:
    return UnlearnResult(model=constant_model(0), wall_seconds=seconds, aux_storage_bytes=storage, method_id="m")


def test_l2_distance_matches_formula() -> None:
    """Test ‖a − b‖ / ‖ref‖ over random vectors."""
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 50))
        a, b, ref = (rng.normal(size=n) for _ in range(3))
        expected = np.linalg.norm(a - b) / np.linalg.norm(ref)
        got = l2_distance(torch.from_numpy(a), torch.from_numpy(b), torch.from_numpy(ref))
        assert got == pytest.approx(expected, rel=1e-12)


def test_l2_distance_is_zero_for_identical() -> None:
    """Test the identity case."""
    a = torch.arange(5, dtype=torch.float32)
    assert l2_distance(a, a.clone(), a) == 0.0


def test_l2_distance_rejects() -> None:
    """Test length and zero-norm validation."""
    with pytest.raises(ValueError, match="differ in length"):
        l2_distance(torch.zeros(3), torch.zeros(4), torch.ones(3))
    with pytest.raises(ValueError, match="zero norm"):
        l2_distance(torch.zeros(3), torch.ones(3), torch.zeros(3))


def test_utility_metrics() -> None:
    """Test (TA, RA) ordering."""
    test = labeled(torch.zeros(4, *INPUT_SHAPE), [0, 0, 0, 1])
    retain = labeled(torch.zeros(2, *INPUT_SHAPE), [0, 1])
    assert utility_metrics(constant_model(0), retain, test) == pytest.approx((75.0, 50.0))


def test_forgetting_accuracy_is_signed_gap() -> None:
    """Test FA_raw and FA_disc."""
    forget = labeled(torch.zeros(3, *INPUT_SHAPE), [0, 0, 1])
    raw, disc = forgetting_accuracy(constant_model(0), forget, constant_model(1))
    assert raw == pytest.approx(200.0 / 3)
    assert disc == pytest.approx(100.0 / 3)
    _, reverse = forgetting_accuracy(constant_model(1), forget, constant_model(0))
    assert reverse == pytest.approx(-100.0 / 3)


def test_forgetting_accuracy_needs_reference() -> None:
    """Test the missing reference."""
    forget = labeled(torch.zeros(1, *INPUT_SHAPE), [0])
    with pytest.raises(MissingReferenceError):
        forgetting_accuracy(constant_model(0), forget, None)


def test_forgetting_accuracy_empty_forget_set() -> None:
    """Test the empty forget set."""
    with pytest.raises(EmptyDatasetError, match="forget set"):
        forgetting_accuracy(constant_model(0), labeled(torch.zeros(0, *INPUT_SHAPE), []), constant_model(1))


def test_cost_metrics() -> None:
    """Test the run time ratio and storage."""
    assert cost_metrics(_result(2.0, 123), _result(8.0)) == (0.25, 123)


@pytest.mark.parametrize("seconds", [0.0, float("inf")])
def test_cost_metrics_rejects_bad_reference(seconds: float) -> None:
    """Test the retrain wall time check."""
    with pytest.raises(ValueError, match="wall time"):
        cost_metrics(_result(1.0), _result(seconds))


def test_unlearn_result_rejects_negative_cost() -> None:
    """Test cost accounting validation."""
    with pytest.raises(ValueError, match="non-negative"):
        _result(-1.0)
