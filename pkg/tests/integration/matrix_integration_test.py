"""End to end runs on synthetic data. Marked slow: they train real (small) models for every method."""
from pathlib import Path

import pytest
from mubench.config import RunStatus
from mubench.harness.main import ORIGINAL_ROW, run_experiment
from mubench.harness.models import ExperimentConfig, load_config
from mubench.harness.report import emit_budget_plot, emit_depoison_plot, emit_table
from mubench.unlearners import method_ids

CONFIG_DIR = Path(__file__).parents[2] / "misc" / "configs"

_DATASET = {"kind": "synthetic", "num_classes": 4, "per_class_train": 100, "per_class_test": 40, "input_shape": [1, 8, 8]}
_TRAIN = {"epochs": 10, "batch_size": 32, "lr": 0.05}


@pytest.mark.slow
def test_smoke_config(tmp_path: Path) -> None:
    """Test the shipped smoke matrix: only incompatible plans fail, and every report renders."""
    store = run_experiment(load_config(CONFIG_DIR / "smoke.json"), tmp_path)
    failed = [r for r in store.rows() if r.status == RunStatus.FAILED]
    assert failed
    assert all(r.method_id == "unsir" and "IncompatiblePlanError" in r.error for r in failed)
    for scenario in store.scenarios():
        assert emit_table(store, scenario)
    assert emit_budget_plot(store, "ta")
    assert emit_depoison_plot(store)


@pytest.mark.slow
def test_class_wise_every_method(tmp_path: Path) -> None:
    """Test all registered methods on a class-wise plan. Retraining forgets the class the original still knows."""
    config = ExperimentConfig.model_validate(
        {
            "dataset": _DATASET,
            "arch": {"kind": "mlp", "hidden": 32},
            "train": _TRAIN,
            "scenarios": [{"kind": "class_wise", "class_id": 0}],
            "methods": [{"id": method_id} for method_id in method_ids()],
            "metrics": {"mia_samples": 100},
        }
    )
    rows = {r.method_id: r for r in run_experiment(config, tmp_path).rows()}
    assert set(rows) == {ORIGINAL_ROW, *method_ids()}
    assert rows["retrain"].status == rows["sisa"].status == RunStatus.OK
    assert all(r.error for r in rows.values() if r.status == RunStatus.FAILED)
    assert rows[ORIGINAL_ROW].fa_raw > 90.0
    assert rows["retrain"].fa_raw < 10.0
    assert rows["retrain"].ta < rows[ORIGINAL_ROW].ta


@pytest.mark.slow
def test_backdoor_removal(tmp_path: Path) -> None:
    """Test that the retrain reference does not carry the backdoor of the poisoned original."""
    config = ExperimentConfig.model_validate(
        {
            "dataset": _DATASET,
            "arch": {"kind": "mlp", "hidden": 32},
            "train": _TRAIN,
            "scenarios": [
                {"kind": "depoison", "budgets": [40], "poison": {"kind": "backdoor", "trigger_size": 3, "target_class": 0}}
            ],
            "methods": [{"id": "retrain"}, {"id": "first_order"}],
        }
    )
    rows = {r.method_id: r for r in run_experiment(config, tmp_path).rows()}
    assert rows["retrain"].asr <= rows[ORIGINAL_ROW].asr
    assert rows["first_order"].status == RunStatus.OK
    assert rows["retrain"].ta > 50.0
