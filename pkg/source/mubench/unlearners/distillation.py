"""Teacher-student methods: Bad Teacher (competent/incompetent teacher pair) and SCRUB."""

import logging as log
import math
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812

from ..constants import (
    BAD_TEACHER_EPOCHS,
    BAD_TEACHER_TEMPERATURE,
    FINETUNE_LR,
    SCRUB_DIVERGENCE_FACTOR,
    SCRUB_EPOCHS,
    SCRUB_MAX_EPOCHS,
)
from ..domain import ArchSpec, TrainingDivergedError, UnlearnContext
from ..substrate.networks import forward, init_model
from ..substrate.training import LossFn
from .base import RunOutput, Unlearner, method_seed, sub_retain_indices, train_custom
from .losses import distillation_kl


def bad_teacher_loss(
    arch: ArchSpec,
    competent: torch.Tensor,
    incompetent: torch.Tensor,
    forget_rows: torch.Tensor,
    temperature: float,
) -> LossFn:
    """Loss closure: rows flagged in `forget_rows` (by batch position in the combined set) follow the incompetent teacher."""

    def loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            good, bad = forward(arch, competent, x), forward(arch, incompetent, x)
        target = torch.where(forget_rows[idx].unsqueeze(1), bad, good)
        return distillation_kl(forward(arch, params, x), target, temperature)

    return loss


class BadTeacher(Unlearner):
    """Distil the original model on retained data and a random model on forgotten data into a student at θ_o."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("bad_teacher", "Competent and incompetent teacher distillation")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Epochs, rate and softmax temperature."""
        return {"epochs": BAD_TEACHER_EPOCHS, "lr": FINETUNE_LR, "temperature": BAD_TEACHER_TEMPERATURE}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """One distillation run over sub-retain ∪ D_f."""
        epochs = int(hp["epochs"])
        if epochs <= 0:
            return RunOutput(ctx.original.with_params(ctx.original.params))
        arch = ctx.original.arch
        # the incompetent teacher is drawn once per run
        incompetent = init_model(arch, method_seed(ctx, self.method_id, "teacher")).params
        sub = sub_retain_indices(ctx)
        combined = np.concatenate([sub, ctx.plan.forget_indices])
        forget_rows = torch.zeros(len(combined), dtype=torch.bool)
        forget_rows[len(sub) :] = True
        loss = bad_teacher_loss(arch, ctx.original.params, incompetent, forget_rows, float(hp["temperature"]))
        params = train_custom(
            ctx.original.params,
            ctx.dataset.subset(combined, name=f"{ctx.dataset.name}:bad_teacher"),
            loss,
            ctx,
            epochs=epochs,
            lr=float(hp["lr"]),
            stream="bad_teacher",
        )
        return RunOutput(ctx.original.with_params(params))


def scrub_max_step(
    arch: ArchSpec, params: torch.Tensor, teacher: torch.Tensor, inputs: torch.Tensor, lr: float, temperature: float = 1.0
) -> torch.Tensor:
    """One plain gradient-ascent step on KL(teacher ‖ student) over a batch."""
    p = params.detach().clone().requires_grad_(True)
    with torch.no_grad():
        target = forward(arch, teacher, inputs)
    value = distillation_kl(forward(arch, p, inputs), target, temperature)
    (grad,) = torch.autograd.grad(value, p)
    return (p + lr * grad).detach()


def divergence_limit(initial: float) -> float:
    """Retain loss above which SCRUB aborts. Unbounded when the teacher fits the retain set exactly."""
    return SCRUB_DIVERGENCE_FACTOR * initial if initial > 0 else math.inf


def _mean_cross_entropy(arch: ArchSpec, params: torch.Tensor, inputs: torch.Tensor, labels: torch.Tensor) -> float:
    with torch.no_grad():
        return float(F.cross_entropy(forward(arch, params, inputs), labels)) if len(labels) else 0.0


class Scrub(Unlearner):
    """Alternate KL maximisation on D_f with KL + cross-entropy minimisation on the sub-retain set."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("scrub", "Max-min teacher-student distillation")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """`max_epochs` is the number of leading epochs that include a max pass."""
        return {
            "epochs": SCRUB_EPOCHS,
            "max_epochs": SCRUB_MAX_EPOCHS,
            "lr": FINETUNE_LR,
            "temperature": 4.0,
            "kl_weight": 1.0,
            "ce_weight": 1.0,
        }

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Max and min passes, guarded against retain-loss blow-up."""
        epochs, max_epochs = int(hp["epochs"]), int(hp["max_epochs"])
        if epochs <= 0:
            return RunOutput(ctx.original.with_params(ctx.original.params))
        arch, teacher = ctx.original.arch, ctx.original.params
        lr, temperature = float(hp["lr"]), float(hp["temperature"])
        kl_weight, ce_weight = float(hp["kl_weight"]), float(hp["ce_weight"])
        forget = ctx.dataset.subset(ctx.plan.forget_indices, name=f"{ctx.dataset.name}:forget")
        retain = ctx.dataset.subset(sub_retain_indices(ctx), name=f"{ctx.dataset.name}:sub_retain")

        def max_loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
            with torch.no_grad():
                target = forward(arch, teacher, x)
            return -distillation_kl(forward(arch, params, x), target, temperature)

        def min_loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
            with torch.no_grad():
                target = forward(arch, teacher, x)
            out = forward(arch, params, x)
            return kl_weight * distillation_kl(out, target, temperature) + ce_weight * F.cross_entropy(out, y)

        initial = _mean_cross_entropy(arch, teacher, retain.inputs, retain.labels)
        limit = divergence_limit(initial)
        params = teacher.detach().clone()
        for epoch in range(epochs):
            if epoch < max_epochs:
                params = train_custom(params, forget, max_loss, ctx, epochs=1, lr=lr, stream=f"scrub-max-{epoch}")
            params = train_custom(params, retain, min_loss, ctx, epochs=1, lr=lr, stream=f"scrub-min-{epoch}")
            current = _mean_cross_entropy(arch, params, retain.inputs, retain.labels)
            log.debug("scrub epoch %d: retain loss %.4f (initial %.4f)", epoch, current, initial)
            if not np.isfinite(current) or current > limit:
                raise TrainingDivergedError(f"SCRUB retain loss {current:.4f} exceeds {limit:.4f} at epoch {epoch}")
        return RunOutput(ctx.original.with_params(params), {"retain_loss_initial": initial})
