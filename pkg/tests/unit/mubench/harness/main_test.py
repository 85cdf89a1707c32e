"""Matrix runner tests on the toy data, in process."""
from pathlib import Path

import pytest
from mubench.config import RunStatus, ScenarioKind
from mubench.harness.main import (
    ORIGINAL_ROW,
    build_cells,
    load_datasets,
    run_experiment,
    scenario_budgets,
    scenario_label,
    train_originals,
)
from mubench.harness.models import ExperimentConfig, ScenarioSettings
from mubench.support.store import get_models_dir

from tests.utilities import tiny_experiment, toy_data


@pytest.fixture(name="config")
def config_fixture() -> ExperimentConfig:
    """One_class and class_wise scenarios with retrain, first_order and unsir."""
    return ExperimentConfig.model_validate(tiny_experiment())


def test_scenario_budgets() -> None:
    """Test budget grids per scenario kind."""
    train, _ = toy_data()
    one_class = ScenarioSettings(kind=ScenarioKind.ONE_CLASS, class_id=0, budgets=[4, 2], budget_percents=[50, 1])
    assert scenario_budgets(one_class, train) == [2, 4, 6]
    assert scenario_budgets(ScenarioSettings(kind=ScenarioKind.CLASS_WISE, class_id=2), train) == [12]


@pytest.mark.parametrize(
    ("scenario", "label"),
    [
        ({"kind": "one_class", "class_id": 3, "budgets": [1]}, "one_class:c3"),
        ({"kind": "worst_case", "budgets": [1]}, "worst_case"),
        ({"kind": "depoison", "budgets": [1], "poison": {"kind": "backdoor", "target_class": 2}}, "depoison:c2:backdoor"),
        ({"kind": "depoison", "budgets": [1], "poison": {"kind": "label_flip"}}, "depoison:label_flip"),
    ],
)
def test_scenario_label(scenario: dict, label: str) -> None:
    """Test descriptors known before planning."""
    assert scenario_label(ScenarioSettings.model_validate(scenario)) == label


def test_build_cells(config: ExperimentConfig) -> None:
    """Test (seed, scenario, budget) order."""
    train, _ = load_datasets(config.dataset)
    cells = build_cells(config.with_seeds([0, 1]), train)
    assert [(c.seed, c.scenario_index, c.budget) for c in cells] == [(0, 0, 2), (0, 1, 12), (1, 0, 2), (1, 1, 12)]


def test_train_originals_caches(config: ExperimentConfig, tmp_path: Path) -> None:
    """Test that a second call reuses the checkpoint."""
    first = train_originals(config, tmp_path)
    mtime = first[0].stat().st_mtime_ns
    assert train_originals(config, tmp_path) == first
    assert first[0].stat().st_mtime_ns == mtime


def test_run_experiment(config: ExperimentConfig, tmp_path: Path) -> None:
    """Test rows, failed rows for incompatible plans and the retrain gap."""
    store = run_experiment(config, tmp_path)
    rows = {(r.method_id, r.scenario): r for r in store.rows()}
    assert len(store) == 8
    assert set(rows) == {
        (method_id, scenario)
        for method_id in (ORIGINAL_ROW, "retrain", "first_order", "unsir")
        for scenario in ("one_class:c0", "class_wise:c1")
    }
    incompatible = rows[("unsir", "one_class:c0")]
    assert incompatible.status == RunStatus.FAILED
    assert "IncompatiblePlanError" in incompatible.error
    assert rows[("unsir", "class_wise:c1")].status == RunStatus.OK
    reference = rows[("retrain", "class_wise:c1")]
    assert reference.fa_disc == 0.0
    assert reference.l2 == 0.0
    assert set(reference.mia) == {"correctness", "confidence", "entropy", "m_entropy", "prob_vector"}
    assert rows[(ORIGINAL_ROW, "one_class:c0")].wall_seconds is None
    assert rows[("first_order", "one_class:c0")].rte_ratio is not None
    assert all(r.config_hash == config.config_hash() for r in rows.values())
    assert len(list(get_models_dir(tmp_path).glob("retrain-*.ckpt"))) == 2


def test_rerun_appends_duplicates(config: ExperimentConfig, tmp_path: Path) -> None:
    """Test that a second run appends flagged rows and reuses the retrain references."""
    config = config.with_methods(["retrain"])
    run_experiment(config, tmp_path)
    store = run_experiment(config, tmp_path)
    assert [r.duplicate for r in store.rows()] == [False] * 4 + [True] * 4
    assert len(list(get_models_dir(tmp_path).glob("retrain-*.ckpt"))) == 2
    assert len(store.manifest()["runs"]) == 2


def test_cell_setup_failure(tmp_path: Path) -> None:
    """Test that a plan that cannot be built gives one failed row per method."""
    config = ExperimentConfig.model_validate(
        tiny_experiment(scenarios=[{"kind": "one_class", "class_id": 0, "budgets": [50]}], methods=[{"id": "retrain"}, {"id": "ssd"}])
    )
    rows = run_experiment(config, tmp_path).rows()
    assert [(r.method_id, r.scenario, r.status) for r in rows] == [
        ("retrain", "one_class:c0", RunStatus.FAILED),
        ("ssd", "one_class:c0", RunStatus.FAILED),
    ]
    assert all("BudgetError" in r.error for r in rows)


def test_empty_method_list(tmp_path: Path) -> None:
    """Test that no methods means no rows and no training, original rows included."""
    config = ExperimentConfig.model_validate(tiny_experiment(methods=[]))
    assert config.metrics.include_original
    store = run_experiment(config, tmp_path)
    assert len(store) == 0
    assert not list(get_models_dir(tmp_path).glob("*.ckpt"))
