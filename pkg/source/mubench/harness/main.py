"""Matrix runner: methods × scenarios × budgets × seeds.

The parent process trains (or loads) the clean original model of every seed, then hands one job per
(scenario, budget, seed) cell to a bounded process pool. A job builds the plan, computes the retrain reference
once and runs every configured method against it. Rows come back to the parent, which is the only writer of the
results store.
"""

import hashlib
import json
import logging as log
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from opentelemetry import trace

import mubench

from ..attacks.main import attack_success_rate, victim_class_accuracy
from ..config import DatasetKind, DatasetSplit, PoisonKind, RunStatus, ScenarioKind
from ..domain import (
    LabeledDataset,
    MetricsReport,
    ModelState,
    ScenarioPlan,
    TrainConfig,
    TrainingLog,
    UnlearnContext,
    UnlearnResult,
)
from ..metrics import cost_metrics, forgetting_accuracy, l2_distance, mia_suite, utility_metrics
from ..scenarios.main import (
    budgets_from_percents,
    build_depoison_scenario,
    select_all_classes,
    select_best_case,
    select_class_wise,
    select_one_class,
    select_worst_case,
)
from ..setup import init
from ..substrate.checkpoint import load_model, save_model
from ..substrate.datasets import load_cifar10, load_csv, make_gaussian_mixture
from ..substrate.inference import Classifier, evaluate
from ..substrate.networks import init_model
from ..substrate.training import train
from ..support.observability import cell_attributes
from ..support.store import cell_dirname, get_artifact_dir, get_models_dir, resolve_output_dir
from ..unlearners import get_method, unlearn
from .models import DatasetSettings, ExperimentConfig, ScenarioSettings
from .results import ResultsStore, report_from_dict, report_to_dict

tracer = trace.get_tracer(__name__, mubench.__version_str__)

ORIGINAL_ROW = "original"
RETRAIN = "retrain"

# TA at or below this multiple of chance counts as a utility collapse
_COLLAPSE_FACTOR = 1.5


@dataclass(frozen=True)
class Cell:
    """One (scenario, budget, seed) job. Every configured method runs inside it."""

    scenario_index: int
    budget: int
    seed: int


def load_datasets(settings: DatasetSettings) -> tuple[LabeledDataset, LabeledDataset]:
    """Train and test splits of the configured dataset."""
    match settings.kind:
        case DatasetKind.SYNTHETIC:
            return make_gaussian_mixture(
                settings.num_classes,
                settings.per_class_train,
                settings.per_class_test,
                settings.input_shape,
                seed=settings.seed,
            )
        case DatasetKind.CIFAR10:
            return (
                load_cifar10(settings.root, DatasetSplit.TRAIN, settings.per_class_train, settings.seed),
                load_cifar10(settings.root, DatasetSplit.TEST, settings.per_class_test, settings.seed),
            )
        case DatasetKind.CSV:
            return (
                load_csv(settings.train_csv, settings.num_classes, DatasetSplit.TRAIN),
                load_csv(settings.test_csv, settings.num_classes, DatasetSplit.TEST),
            )
        case _:
            raise ValueError(f"unknown dataset kind '{settings.kind}'")


def train_config_for(config: ExperimentConfig, dataset: LabeledDataset, seed: int) -> TrainConfig:
    """Domain training config of one seed."""
    arch = config.arch.to_arch(dataset.input_shape, dataset.num_classes)
    return config.train.to_train_config(arch, seed)


def _digest(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()[:16]


def original_model(
    dataset: LabeledDataset, train_config: TrainConfig, models_dir: Path, tag: str = ORIGINAL_ROW
) -> tuple[ModelState, TrainingLog]:
    """Load the cached model trained on `dataset` with `train_config`, training it first when missing.

    The training log holds θ_0 only. Amnesiac replays the run with recording on when it needs the update log.
    """
    key = _digest(dataset.fingerprint(), json.dumps(train_config.to_dict(), sort_keys=True))
    path = Path(models_dir) / f"{tag}-{key}.ckpt"
    if path.exists():
        log.info("Using cached %s model '%s'", tag, path)
        model = load_model(path)
    else:
        model = train(dataset, train_config)
        save_model(model, path)
        log.info("Saved %s model to '%s'", tag, path)
    return model, TrainingLog(initial=init_model(train_config.arch, train_config.seed))


def scenario_budgets(scenario: ScenarioSettings, dataset: LabeledDataset) -> list[int]:
    """Sorted, distinct sample budgets of a scenario. Class-wise plans forget the whole class."""
    if scenario.kind == ScenarioKind.CLASS_WISE:
        return [len(dataset.class_indices(scenario.class_id))]
    budgets = set(scenario.budgets)
    if scenario.budget_percents:
        converted = budgets_from_percents(dataset, scenario.kind, scenario.budget_percents, scenario.class_id)
        dropped = [p for p, b in zip(scenario.budget_percents, converted) if b == 0]
        if dropped:
            log.warning("Budget percents %s round to zero samples and are skipped", dropped)
        budgets.update(b for b in converted if b > 0)
    return sorted(budgets)


def scenario_label(scenario: ScenarioSettings) -> str:
    """Scenario descriptor known before the plan is built; matches `ScenarioPlan.descriptor`."""
    parts = [scenario.kind.value]
    if scenario.kind in (ScenarioKind.ONE_CLASS, ScenarioKind.CLASS_WISE):
        parts.append(f"c{scenario.class_id}")
    if scenario.poison is not None:
        if scenario.poison.kind == PoisonKind.BACKDOOR:
            parts.append(f"c{scenario.poison.target_class}")
        parts.append(scenario.poison.kind.value)
    return ":".join(parts)


def build_cells(config: ExperimentConfig, dataset: LabeledDataset) -> list[Cell]:
    """Cells in (seed, scenario, budget) order."""
    return [
        Cell(index, budget, seed)
        for seed in config.seeds
        for index, scenario in enumerate(config.scenarios)
        for budget in scenario_budgets(scenario, dataset)
    ]


def build_plan(scenario: ScenarioSettings, dataset: LabeledDataset, original: ModelState, budget: int, seed: int) -> ScenarioPlan:
    """Forget/retain partition of a non-poisoning scenario."""
    match scenario.kind:
        case ScenarioKind.ONE_CLASS:
            return select_one_class(dataset, scenario.class_id, budget, seed)
        case ScenarioKind.ALL_CLASSES:
            return select_all_classes(dataset, budget, seed)
        case ScenarioKind.CLASS_WISE:
            return select_class_wise(dataset, scenario.class_id)
        case ScenarioKind.WORST_CASE:
            return select_worst_case(dataset, original, budget)
        case ScenarioKind.BEST_CASE:
            return select_best_case(dataset, original, budget)
        case _:
            raise ValueError(f"'{scenario.kind.value}' plans are built by build_depoison_scenario()")


def retrain_reference(ctx: UnlearnContext, models_dir: Path, hyperparams: dict) -> UnlearnResult:
    """The gold standard for a plan, cached on disk by (plan fingerprint, seed)."""
    key = f"retrain-{ctx.plan.fingerprint()}-s{ctx.train_config.seed}"
    model_file, timing_file = Path(models_dir) / f"{key}.ckpt", Path(models_dir) / f"{key}.json"
    if model_file.exists() and timing_file.exists():
        log.info("Using cached retrain reference '%s'", model_file)
        timing = json.loads(timing_file.read_text(encoding="utf-8"))
        return UnlearnResult(
            model=load_model(model_file),
            wall_seconds=float(timing["wall_seconds"]),
            aux_storage_bytes=int(timing["aux_storage_bytes"]),
            method_id=RETRAIN,
            hyperparams=timing.get("hyperparams", {}),
            diagnostics={"cached": True},
        )
    result = unlearn(get_method(RETRAIN).spec(**hyperparams), ctx)
    save_model(result.model, model_file)
    timing_file.write_text(
        json.dumps(
            {
                "wall_seconds": result.wall_seconds,
                "aux_storage_bytes": result.aux_storage_bytes,
                "hyperparams": result.hyperparams,
            }
        ),
        encoding="utf-8",
    )
    return result


def measure(
    model: Classifier,
    ctx: UnlearnContext,
    test: LabeledDataset,
    config: ExperimentConfig,
    reference: Optional[UnlearnResult],
    result: Optional[UnlearnResult] = None,
) -> dict:
    """Metric fields of a results row.

    Args:
        model: Model under evaluation.
        ctx: Context of the cell; its dataset and plan give D_r and D_f.
        test: Clean test split.
        config: Experiment config, for the metric toggles.
        reference: Retrain reference of the cell, if it could be computed.
        result: The method's unlearning result; None for the original model row.
    """
    settings = config.metrics
    plan, warnings = ctx.plan, []
    retain = ctx.dataset.subset(plan.retain_indices, name=f"{ctx.dataset.name}:retain")
    forget = ctx.dataset.subset(plan.forget_indices, name=f"{ctx.dataset.name}:forget")
    fields: dict = {}

    if len(retain):
        fields["ta"], fields["ra"] = utility_metrics(model, retain, test)
    else:
        warnings.append("empty_retain_set")
        fields["ta"] = evaluate(model, test)
    if fields["ta"] is not None and fields["ta"] <= _COLLAPSE_FACTOR * 100.0 / test.num_classes:
        log.warning("Test accuracy %.2f is near chance: utility collapsed", fields["ta"])
        warnings.append("utility_collapse")

    if len(forget):
        if reference is None:
            warnings.append("missing_retrain_reference")
            fields["fa_raw"] = evaluate(model, forget)
        else:
            fields["fa_raw"], fields["fa_disc"] = forgetting_accuracy(model, forget, reference.model)

    if settings.mia and len(retain) and len(forget):
        n_per_side = None
        if settings.mia_samples is not None:
            n_per_side = min(settings.mia_samples, len(retain), len(test))
        fields["mia"] = mia_suite(model, retain, test, forget, settings.mia_kinds, ctx.train_config.seed, n_per_side)

    if settings.l2 and reference is not None and isinstance(model, ModelState) and isinstance(reference.model, ModelState):
        fields["l2"] = l2_distance(model.params, reference.model.params, reference.model.params)

    if result is not None:
        fields["wall_seconds"] = result.wall_seconds
        fields["storage_bytes"] = result.aux_storage_bytes
        if reference is not None:
            fields["rte_ratio"] = cost_metrics(result, reference)[0]
        if result.diagnostics.get("warning"):
            warnings.append(str(result.diagnostics["warning"]))

    if plan.poison is not None:
        if plan.poison.kind == PoisonKind.BACKDOOR:
            fields["asr"] = attack_success_rate(model, test, plan.poison, settings.asr_convention)
        else:
            fields["victim_accuracy"] = victim_class_accuracy(model, test, plan.poison.flip_pairs[0][0])

    fields["warnings"] = warnings
    return fields


def _row(method_id: str, plan_or_label: ScenarioPlan | str, kind: ScenarioKind, budget: int, seed: int, **fields: object) -> MetricsReport:
    if isinstance(plan_or_label, ScenarioPlan):
        scenario, target = plan_or_label.descriptor, plan_or_label.target_class
    else:
        scenario, target = plan_or_label, None
    return MetricsReport(
        method_id=method_id,
        scenario=scenario,
        scenario_kind=kind.value,
        budget=budget,
        seed=seed,
        target_class=target,
        **fields,  # type: ignore[arg-type]
    )


def _failure(e: Exception) -> str:
    return f"{type(e).__name__}: {e}"


def _cell_context(
    config: ExperimentConfig, root: Path, cell: Cell, train_ds: LabeledDataset
) -> UnlearnContext:
    """Plan the cell and assemble the unlearning context (artifact store of the retrain reference)."""
    scenario = config.scenarios[cell.scenario_index]
    train_config = train_config_for(config, train_ds, cell.seed)
    models_dir = get_models_dir(root)
    if scenario.kind == ScenarioKind.DEPOISON:
        dataset, plan = build_depoison_scenario(train_ds, scenario.poison.to_spec(cell.budget, cell.seed))
        original, training_log = original_model(dataset, train_config, models_dir, tag="poisoned")
    else:
        dataset = train_ds
        original, training_log = original_model(dataset, train_config, models_dir)
        plan = build_plan(scenario, dataset, original, cell.budget, cell.seed)
    if plan.degenerate:
        log.warning("Plan %s leaves an empty retain set", plan.descriptor)
    return UnlearnContext(
        original=original,
        dataset=dataset,
        plan=plan,
        train_config=train_config,
        artifact_store=get_artifact_dir(root, RETRAIN, cell_dirname(plan.descriptor, plan.budget, cell.seed)),
        sub_retain_fraction=config.sub_retain_fraction,
        training_log=training_log,
        augment_during_unlearning=config.augment_during_unlearning,
    )


def run_cell(config_json: str, out: str, cell: Cell) -> list[dict]:
    """Run every configured method on one cell. Returns the rows as JSON friendly dicts.

    Method failures become failed rows. Failures before any method runs (dataset, plan or original model) are
    raised to the caller.
    """
    init()
    config = ExperimentConfig.model_validate_json(config_json)
    config_hash, root = config.config_hash(), Path(out)
    scenario = config.scenarios[cell.scenario_index]
    train_ds, test_ds = load_datasets(config.dataset)
    base = _cell_context(config, root, cell, train_ds)
    plan, kind, cell_name = base.plan, scenario.kind, cell_dirname(base.plan.descriptor, base.plan.budget, cell.seed)
    overrides = {m.id: m.hyperparams for m in config.methods}

    rows: list[MetricsReport] = []
    with tracer.start_as_current_span("run_cell", attributes=cell_attributes("*", plan.descriptor, plan.budget, cell.seed)):
        reference, reference_error = None, None
        try:
            reference = retrain_reference(base, get_models_dir(root), overrides.get(RETRAIN, {}))
        except Exception as e:
            log.exception("Retrain reference failed for %s", cell_name)
            reference_error = _failure(e)

        if config.metrics.include_original:
            try:
                fields = measure(base.original, base, test_ds, config, reference)
            except Exception as e:
                log.exception("Measuring the original model failed on %s", cell_name)
                fields = {"status": RunStatus.FAILED, "error": _failure(e)}
            rows.append(_row(ORIGINAL_ROW, plan, kind, plan.budget, cell.seed, config_hash=config_hash, **fields))

        for method in config.methods:
            try:
                if method.id == RETRAIN:
                    if reference is None:
                        raise RuntimeError(reference_error or "retrain reference unavailable")
                    result = reference
                else:
                    ctx = UnlearnContext(
                        original=base.original,
                        dataset=base.dataset,
                        plan=plan,
                        train_config=base.train_config,
                        artifact_store=get_artifact_dir(root, method.id, cell_name),
                        sub_retain_fraction=base.sub_retain_fraction,
                        training_log=base.training_log,
                        augment_during_unlearning=base.augment_during_unlearning,
                    )
                    result = unlearn(get_method(method.id).spec(**method.hyperparams), ctx)
                fields = measure(result.model, base, test_ds, config, reference, result)
                rows.append(
                    _row(method.id, plan, kind, plan.budget, cell.seed, hyperparams=result.hyperparams, config_hash=config_hash, **fields)
                )
            except Exception as e:
                log.exception("Method %s failed on %s", method.id, cell_name)
                rows.append(
                    _row(
                        method.id,
                        plan,
                        kind,
                        plan.budget,
                        cell.seed,
                        status=RunStatus.FAILED,
                        hyperparams=method.hyperparams,
                        error=_failure(e),
                        config_hash=config_hash,
                    )
                )
    return [report_to_dict(r) for r in rows]


def failed_cell_rows(config: ExperimentConfig, cell: Cell, error: Exception) -> list[MetricsReport]:
    """One failed row per method when a whole cell could not be set up."""
    scenario = config.scenarios[cell.scenario_index]
    return [
        _row(
            method.id,
            scenario_label(scenario),
            scenario.kind,
            cell.budget,
            cell.seed,
            status=RunStatus.FAILED,
            hyperparams=method.hyperparams,
            error=_failure(error),
            config_hash=config.config_hash(),
        )
        for method in config.methods
    ]


@tracer.start_as_current_span(name="train_originals")
def train_originals(config: ExperimentConfig, out: Optional[Path | str] = None) -> list[Path]:
    """Train (or find cached) clean original models for every configured seed. Returns the checkpoint files."""
    root = resolve_output_dir(out or config.out)
    train_ds, _ = load_datasets(config.dataset)
    models_dir = get_models_dir(root)
    before = set(models_dir.glob("*.ckpt"))
    for seed in config.seeds:
        original_model(train_ds, train_config_for(config, train_ds, seed), models_dir)
    files = sorted(set(models_dir.glob(f"{ORIGINAL_ROW}-*.ckpt")))
    log.info("%d original model(s) ready, %d newly trained", len(files), len(set(files) - before))
    return files


@tracer.start_as_current_span(name="run_experiment")
def run_experiment(config: ExperimentConfig, out: Optional[Path | str] = None) -> ResultsStore:
    """Run the matrix and append its rows to the results store of `out` (else `config.out`, else `MUBENCH_DATA`).

    Cells run in a pool of `config.workers` processes, or in this process when `workers` is 1.
    """
    root = resolve_output_dir(out or config.out)
    store = ResultsStore(root)
    store.write_manifest(config.config_hash(), config.model_dump(mode="json"))
    span = trace.get_current_span()
    span.set_attributes({"mubench.config_hash": config.config_hash(), "mubench.methods": len(config.methods)})
    if not config.methods:
        log.info("No methods configured, nothing to run")
        return store

    train_ds, _ = load_datasets(config.dataset)
    cells = build_cells(config, train_ds)
    if any(s.kind != ScenarioKind.DEPOISON for s in config.scenarios):
        train_originals(config, root)
    log.info("Running %d method(s) over %d cell(s) with %d worker(s)", len(config.methods), len(cells), config.workers)

    config_json = config.model_dump_json()
    if config.workers == 1:
        for cell in cells:
            try:
                _store_outcome(store, config, cell, run_cell(config_json, str(root), cell), None)
            except Exception as e:
                log.exception("Cell %s could not be set up", cell)
                _store_outcome(store, config, cell, None, e)
        return store

    with ProcessPoolExecutor(max_workers=config.workers, initializer=init) as executor:
        futures = {executor.submit(run_cell, config_json, str(root), cell): cell for cell in cells}
        for future in as_completed(futures):
            cell = futures[future]
            try:
                _store_outcome(store, config, cell, future.result(), None)
            except Exception as e:
                log.exception("Cell %s could not be set up", cell)
                _store_outcome(store, config, cell, None, e)
    return store


def _store_outcome(
    store: ResultsStore, config: ExperimentConfig, cell: Cell, rows: Optional[list[dict]], error: Optional[Exception]
) -> None:
    reports = failed_cell_rows(config, cell, error) if rows is None else [report_from_dict(r) for r in rows]
    for report in reports:
        store.append(report)
