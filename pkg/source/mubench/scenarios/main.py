"""Forget/retain partitions for the six unlearning scenarios.

Every plan satisfies forget ∪ retain = all training indices and forget ∩ retain = ∅. Index sets are sorted.
Random selections draw from the `scenario` stream of the given seed, so a seed pins the plan.
"""

import logging as log
from typing import Optional

import numpy as np

from ..attacks.main import apply_poison
from ..config import PoisonKind, ScenarioKind
from ..constants import DEFAULT_TARGET_CLASS
from ..domain import BudgetError, LabeledDataset, ModelState, PoisonSpec, ScenarioPlan
from ..substrate.inference import per_sample_loss
from ..support.seeding import numpy_rng


def _plan(
    kind: ScenarioKind,
    dataset: LabeledDataset,
    forget: np.ndarray,
    budget: int,
    *,
    target_class: Optional[int] = None,
    poison: Optional[PoisonSpec] = None,
    seed: Optional[int] = None,
) -> ScenarioPlan:
    forget = np.sort(np.asarray(forget, dtype=np.int64))
    retain = np.setdiff1d(np.arange(len(dataset), dtype=np.int64), forget, assume_unique=True)
    degenerate = len(retain) == 0
    if degenerate:
        log.warning("Scenario %s on '%s' leaves an empty retain set", kind.value, dataset.name)
    return ScenarioPlan(
        kind=kind,
        forget_indices=forget,
        retain_indices=retain,
        num_samples=len(dataset),
        budget=budget,
        target_class=target_class,
        poison=poison,
        seed=seed,
        degenerate=degenerate,
    )


def _check_class(dataset: LabeledDataset, class_id: int) -> None:
    if not 0 <= class_id < dataset.num_classes:
        raise ValueError(f"class {class_id} outside [0, {dataset.num_classes})")


def _check_budget(budget: int, population: int, what: str) -> None:
    if budget < 0:
        raise BudgetError(f"budget must be >= 0, got {budget}")
    if budget > population:
        raise BudgetError(f"budget {budget} exceeds {what} of {population}")


def select_one_class(
    dataset: LabeledDataset, class_id: int = DEFAULT_TARGET_CLASS, budget: int = 0, seed: int = 0
) -> ScenarioPlan:
    """Forget `budget` samples drawn uniformly without replacement from one class."""
    _check_class(dataset, class_id)
    members = dataset.class_indices(class_id)
    _check_budget(budget, len(members), f"class {class_id} population")
    forget = numpy_rng(seed, "scenario", "one_class", class_id).choice(members, size=budget, replace=False)
    return _plan(ScenarioKind.ONE_CLASS, dataset, forget, budget, target_class=class_id, seed=seed)


def select_all_classes(dataset: LabeledDataset, budget: int, seed: int = 0) -> ScenarioPlan:
    """Forget `budget` samples drawn uniformly without replacement from the whole training set."""
    _check_budget(budget, len(dataset), "dataset size")
    forget = numpy_rng(seed, "scenario", "all_classes").choice(len(dataset), size=budget, replace=False)
    return _plan(ScenarioKind.ALL_CLASSES, dataset, forget, budget, seed=seed)


def select_class_wise(dataset: LabeledDataset, class_id: int = DEFAULT_TARGET_CLASS) -> ScenarioPlan:
    """Forget every sample of one class. The budget is the class size."""
    _check_class(dataset, class_id)
    forget = dataset.class_indices(class_id)
    return _plan(ScenarioKind.CLASS_WISE, dataset, forget, len(forget), target_class=class_id)


def _by_loss(dataset: LabeledDataset, model: ModelState, budget: int, lowest: bool) -> np.ndarray:
    _check_budget(budget, len(dataset), "dataset size")
    losses = per_sample_loss(model, dataset)
    # stable sort keeps equal losses in index order
    order = np.argsort(losses if lowest else -losses, kind="stable")
    return order[:budget]


def select_worst_case(dataset: LabeledDataset, model: ModelState, budget: int) -> ScenarioPlan:
    """Forget the `budget` samples with the lowest loss under the original model. Ties go to the lower index."""
    return _plan(ScenarioKind.WORST_CASE, dataset, _by_loss(dataset, model, budget, lowest=True), budget, seed=model.seed)


def select_best_case(dataset: LabeledDataset, model: ModelState, budget: int) -> ScenarioPlan:
    """Forget the `budget` samples with the highest loss under the original model. Ties go to the lower index."""
    return _plan(ScenarioKind.BEST_CASE, dataset, _by_loss(dataset, model, budget, lowest=False), budget, seed=model.seed)


def build_depoison_scenario(
    dataset: LabeledDataset, poison_spec: PoisonSpec, seed: Optional[int] = None
) -> tuple[LabeledDataset, ScenarioPlan]:
    """Poison the training set and plan the removal of exactly the poisoned samples.

    Returns:
        The poisoned dataset (train on this to get the attacked model) and the plan over its indices.
    """
    spec = poison_spec
    if seed is not None and seed != spec.seed:
        spec = PoisonSpec.from_dict({**spec.to_dict(), "seed": seed})
    poisoned, indices = apply_poison(dataset, spec)
    target = spec.target_class if spec.kind == PoisonKind.BACKDOOR else None
    plan = _plan(ScenarioKind.DEPOISON, poisoned, indices, spec.budget, target_class=target, poison=spec, seed=spec.seed)
    return poisoned, plan


def budgets_from_percents(
    dataset: LabeledDataset, kind: ScenarioKind, percents: list[float] | tuple[float, ...], class_id: int = DEFAULT_TARGET_CLASS
) -> list[int]:
    """Sample counts for a percentage sweep: of the class population for one_class, of |D| otherwise."""
    if kind == ScenarioKind.ONE_CLASS:
        population = len(dataset.class_indices(class_id))
    elif kind in (ScenarioKind.ALL_CLASSES, ScenarioKind.WORST_CASE, ScenarioKind.BEST_CASE, ScenarioKind.DEPOISON):
        population = len(dataset)
    else:
        raise ValueError(f"scenario '{kind.value}' has no budget sweep")
    out = []
    for percent in percents:
        if not 0 <= percent <= 100:
            raise ValueError(f"budget percent {percent} outside [0, 100]")
        out.append(int(round(population * percent / 100.0)))
    return out
