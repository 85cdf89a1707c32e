"""The unlearning contract and the shared plumbing of every method.

A method consumes (θ_o, D, plan, hyperparameters) and emits an `UnlearnResult`. Work that belongs to the original
training run (θ_0, update logs, SISA shards) happens in `prepare()` and is not timed; `run()` is timed. Storage is
the growth of the method's artifact directory over both phases.
"""

import logging as log
import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch
from opentelemetry import trace

import mubench

from ..config import ScenarioKind
from ..domain import (
    IncompatiblePlanError,
    LabeledDataset,
    MethodSpec,
    ModelState,
    SisaEnsemble,
    UnlearnContext,
    UnlearnResult,
)
from ..substrate.training import dataset_batches, fine_tune, optimise
from ..support.observability import cell_attributes
from ..support.seeding import derive_seed, numpy_rng
from ..support.store import dir_size_bytes

tracer = trace.get_tracer(__name__, mubench.__version_str__)


@dataclass
class RunOutput:
    """What `Unlearner.run()` hands back to the dispatcher."""

    model: ModelState | SisaEnsemble
    diagnostics: dict = field(default_factory=dict)


class Unlearner(ABC):
    """Abstract unlearning method. To be extended by the concrete methods in this package."""

    class_wise_only = False
    requires_training_log = False
    exact = False
    """Exact methods (retraining based) are reported apart from the approximate ones."""

    def __init__(self: Self, method_id: str, summary: str) -> None:
        """Initialize the method."""
        self.method_id = method_id
        self.summary = summary

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Hyperparameter names and default values. Any other key is rejected."""
        return {}

    def resolve_hyperparams(self: Self, overrides: dict[str, Any]) -> dict[str, Any]:
        """Defaults updated with `overrides`."""
        unknown = sorted(set(overrides) - set(self.defaults))
        if unknown:
            raise ValueError(f"unknown hyperparameters for '{self.method_id}': {', '.join(unknown)}")
        return {**self.defaults, **overrides}

    def check_plan(self: Self, ctx: UnlearnContext) -> None:
        """Reject plans this method cannot serve."""
        if self.class_wise_only and ctx.plan.kind != ScenarioKind.CLASS_WISE:
            raise IncompatiblePlanError(f"'{self.method_id}' only supports class_wise plans, got '{ctx.plan.kind.value}'")

    def spec(self: Self, **hyperparams: Any) -> MethodSpec:
        """A `MethodSpec` for this method."""
        return MethodSpec(
            method_id=self.method_id,
            hyperparams=self.resolve_hyperparams(hyperparams),
            requires_training_log=self.requires_training_log,
            class_wise_only=self.class_wise_only,
        )

    def prepare(self: Self, ctx: UnlearnContext, hp: dict[str, Any]) -> Any:
        """Untimed set-up. The return value is passed to `run()`."""
        return None

    @abstractmethod
    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Produce the unlearned model."""
        pass


def sub_retain_indices(ctx: UnlearnContext) -> np.ndarray:
    """Seeded subset of the retain set, ⌈fraction·|D_r|⌉ samples, sorted."""
    retain = ctx.plan.retain_indices
    count = min(len(retain), math.ceil(ctx.sub_retain_fraction * len(retain)))
    rng = numpy_rng(ctx.train_config.seed, "sub_retain", ctx.plan.fingerprint())
    return np.sort(rng.choice(retain, size=count, replace=False)).astype(np.int64)


def forget_set(ctx: UnlearnContext) -> LabeledDataset:
    """D_f as a dataset."""
    return ctx.dataset.subset(ctx.plan.forget_indices, name=f"{ctx.dataset.name}:forget")


def sub_retain_set(ctx: UnlearnContext) -> LabeledDataset:
    """The sub-retain dataset fine-tuning phases may use."""
    return ctx.dataset.subset(sub_retain_indices(ctx), name=f"{ctx.dataset.name}:sub_retain")


def method_seed(ctx: UnlearnContext, method_id: str, *names: object) -> int:
    """Seed of a method's own random streams."""
    return derive_seed(ctx.train_config.seed, "unlearn", method_id, *names)


def train_custom(
    params: torch.Tensor,
    dataset: LabeledDataset,
    loss_fn: Callable[[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor],
    ctx: UnlearnContext,
    *,
    epochs: int,
    lr: float,
    stream: str,
    grad_mask: Optional[torch.Tensor] = None,
    grad_transform: Optional[Callable[[torch.Tensor], torch.Tensor]] = None,
    momentum: float = 0.9,
) -> torch.Tensor:
    """SGD at a constant rate over `dataset` with a method specific loss. Batch indices are positions in `dataset`."""
    if epochs <= 0 or len(dataset) == 0:
        return params.detach().clone()
    batches: Callable[[int], Any] = dataset_batches(
        dataset, ctx.train_config.batch_size, ctx.train_config.seed, augment=ctx.augment_during_unlearning, stream=stream
    )
    outcome = optimise(
        params,
        batches,
        loss_fn,
        epochs=epochs,
        lr=lr,
        momentum=momentum,
        grad_mask=grad_mask,
        grad_transform=grad_transform,
    )
    return outcome.params


def storage_bytes(ctx: UnlearnContext) -> int:
    """Bytes currently below the artifact directory."""
    return dir_size_bytes(ctx.artifact_store)


def unlearn(spec: MethodSpec, ctx: UnlearnContext) -> UnlearnResult:
    """Run a registered method on a context with uniform timing and storage accounting.

    Raises:
        UnknownMethodError: `spec.method_id` is not registered.
        IncompatiblePlanError: the method cannot serve `ctx.plan`.
    """
    from .list import get_method

    method = get_method(spec.method_id)
    hp = method.resolve_hyperparams({**ctx.method_params, **spec.hyperparams})
    method.check_plan(ctx)
    ctx.artifact_store.mkdir(parents=True, exist_ok=True)
    attributes = cell_attributes(method.method_id, ctx.plan.descriptor, ctx.plan.budget, ctx.train_config.seed)

    with tracer.start_as_current_span(f"unlearn.{method.method_id}", attributes=attributes):
        baseline = storage_bytes(ctx)
        prepared = method.prepare(ctx, hp)
        wall_start, cpu_start = time.perf_counter(), time.process_time()
        output = method.run(ctx, hp, prepared)
        wall, cpu = time.perf_counter() - wall_start, time.process_time() - cpu_start
        stored = max(0, storage_bytes(ctx) - baseline)

    model = output.model
    if isinstance(model, ModelState) and model.arch.num_classes != ctx.original.arch.num_classes:
        raise IncompatiblePlanError(f"'{method.method_id}' changed the output arity")
    diagnostics = {"cpu_seconds": cpu, **output.diagnostics}
    log.info("unlearn() - %s on %s: %.2fs, %d bytes", method.method_id, ctx.plan.descriptor, wall, stored)
    return UnlearnResult(
        model=model,
        wall_seconds=wall,
        aux_storage_bytes=stored,
        method_id=method.method_id,
        hyperparams=hp,
        diagnostics=diagnostics,
    )


def finetune_sub_retain(
    ctx: UnlearnContext,
    model: ModelState,
    *,
    epochs: int,
    lr: float,
    stream: str,
    grad_mask: Optional[torch.Tensor] = None,
) -> ModelState:
    """Cross-entropy fine-tuning on the sub-retain set at a constant rate."""
    return fine_tune(
        model,
        sub_retain_set(ctx),
        epochs=epochs,
        lr=lr,
        batch_size=ctx.train_config.batch_size,
        seed=method_seed(ctx, stream),
        stream=stream,
        grad_mask=grad_mask,
        augment=ctx.augment_during_unlearning,
    )
