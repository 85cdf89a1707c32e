"""Domain tests."""
import numpy as np
import pytest
import torch
from mubench.config import ArchKind, DatasetSplit, MiaFeatureKind, PoisonKind, RunStatus, ScenarioKind
from mubench.domain import (
    ArchSpec,
    BudgetError,
    LabeledDataset,
    MetricsReport,
    MiaPredictor,
    ModelState,
    PoisonSpec,
    ScenarioPlan,
    ShapeMismatchError,
    TrainConfig,
)

from tests.utilities import labeled, plan_for, toy_arch, toy_data


@pytest.mark.parametrize(
    ("kind", "expected"),
    [
        (ArchKind.LOGISTIC, 64 * 3 + 3),
        (ArchKind.MLP, 64 * 6 + 6 + 6 * 3 + 3),
        (ArchKind.CNN, (2 * 9 + 2) + (3 * 2 * 9 + 3) + (12 * 6 + 6) + (6 * 3 + 3)),
    ],
)
def test_param_count(kind: ArchKind, expected: int) -> None:
    """Test the analytic parameter count."""
    assert toy_arch(kind).param_count() == expected


def test_arch_dict_round_trip() -> None:
    """Test arch serialisation."""
    arch = toy_arch(ArchKind.CNN)
    assert ArchSpec.from_dict(arch.to_dict()) == arch


@pytest.mark.parametrize(
    ("kind", "input_shape", "num_classes"),
    [
        (ArchKind.LOGISTIC, (1, 4, 4), 1),
        (ArchKind.CNN, (3, 4, 4), 10),
        (ArchKind.MLP, (4, 4), 10),
    ],
)
def test_arch_rejects_invalid(kind: ArchKind, input_shape: tuple, num_classes: int) -> None:
    """Test arch validation."""
    with pytest.raises(ValueError):  # noqa: PT011
        ArchSpec(kind, input_shape, num_classes)


def test_dataset_rejects_out_of_range_labels() -> None:
    """Test label validation."""
    with pytest.raises(ValueError, match="labels must lie"):
        labeled(torch.zeros(2, 1, 8, 8), [0, 3])


def test_dataset_rejects_flat_inputs() -> None:
    """Test input rank validation."""
    with pytest.raises(ShapeMismatchError):
        LabeledDataset("flat", torch.zeros(2, 64), torch.zeros(2, dtype=torch.int64), 3, DatasetSplit.TRAIN)


def test_dataset_subset_keeps_order() -> None:
    """Test subset order and class helpers."""
    data = labeled(torch.arange(4, dtype=torch.float32).reshape(4, 1, 1, 1), [2, 0, 1, 0])
    sub = data.subset([3, 0])
    assert sub.labels.tolist() == [0, 2]
    assert sub.inputs.flatten().tolist() == [3.0, 0.0]
    assert data.class_indices(0).tolist() == [1, 3]
    assert data.class_counts().tolist() == [2, 1, 1]


def test_fingerprint_tracks_content() -> None:
    """Test dataset fingerprints."""
    train, _ = toy_data()
    again, _ = toy_data()
    flipped = train.replace(labels=(train.labels + 1) % train.num_classes)
    assert train.fingerprint() == again.fingerprint()
    assert train.fingerprint() != flipped.fingerprint()


@pytest.mark.parametrize(
    "changes",
    [{"lr": 0.0}, {"momentum": 1.0}, {"batch_size": 0}, {"epochs": 0}, {"epochs": -1}, {"momentum": 0.0}],
)
def test_train_config_validation(changes: dict) -> None:
    """Test train config validation. Nesterov without momentum is rejected too."""
    with pytest.raises(ValueError):  # noqa: PT011
        TrainConfig(arch=toy_arch(), **changes)


def test_model_state_checks_param_count() -> None:
    """Test parameter vector validation."""
    with pytest.raises(ShapeMismatchError):
        ModelState(toy_arch(), torch.zeros(5), 0, "", 0)


def test_model_state_tensors_round_trip() -> None:
    """Test named views."""
    arch = toy_arch(ArchKind.MLP)
    model = ModelState(arch, torch.arange(arch.param_count(), dtype=torch.float32), 0, "", 0)
    tensors = model.tensors()
    assert tensors["hidden.weight"].shape == (6, 64)
    assert torch.equal(ModelState.from_tensors(arch, tensors, seed=0, trained_on="", epochs=0).params, model.params)


def test_plan_rejects_overlap() -> None:
    """Test the partition property."""
    with pytest.raises(ValueError, match="overlap"):
        ScenarioPlan(ScenarioKind.ALL_CLASSES, np.array([0, 1]), np.array([1, 2]), 3, 2)


def test_plan_rejects_incomplete_cover() -> None:
    """Test that every index is in exactly one set."""
    with pytest.raises(ValueError, match="cover"):
        ScenarioPlan(ScenarioKind.ALL_CLASSES, np.array([0]), np.array([1]), 3, 1)


def test_plan_json_round_trip() -> None:
    """Test plan pinning."""
    train, _ = toy_data()
    spec = PoisonSpec(PoisonKind.BACKDOOR, budget=2, seed=4)
    plan = plan_for(train, [1, 5], ScenarioKind.DEPOISON, target_class=0, poison=spec, seed=4)
    again = ScenarioPlan.from_json(plan.to_json())
    assert again.fingerprint() == plan.fingerprint()
    assert again.poison == spec
    assert again.descriptor == "depoison:c0:backdoor"


def test_poison_spec_rejects_negative_budget() -> None:
    """Test poison budget validation."""
    with pytest.raises(BudgetError):
        PoisonSpec(PoisonKind.LABEL_FLIP, budget=-1)


def test_mia_predictor_decision() -> None:
    """Test that a score of zero counts as member."""
    predictor = MiaPredictor(MiaFeatureKind.CONFIDENCE, np.array([1.0]), -0.5)
    assert predictor.is_member(np.array([[0.5], [0.2], [0.9]])).tolist() == [True, False, True]


def test_metrics_report_rejects_bad_percent() -> None:
    """Test percentage validation."""
    with pytest.raises(ValueError, match="percentage"):
        MetricsReport(method_id="scrub", scenario="one_class:c0", scenario_kind="one_class", budget=5, seed=0, ta=101.0)


def test_metrics_report_key() -> None:
    """Test the cell key."""
    report = MetricsReport(
        method_id="ssd", scenario="all_classes", scenario_kind="all_classes", budget=9, seed=2, status=RunStatus.FAILED, error="boom"
    )
    assert report.key == ("ssd", "all_classes", 9, 2)
