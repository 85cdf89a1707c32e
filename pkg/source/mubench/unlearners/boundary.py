"""Decision-boundary methods: Boundary Shrink (adversarial relabelling) and Boundary Expand (shadow class)."""

import logging as log
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812

from ..constants import BOUNDARY_EPOCHS, BOUNDARY_EPSILON, FINETUNE_LR
from ..domain import ArchSpec, LabeledDataset, UnlearnContext
from ..substrate.networks import forward, narrow_output, widen_output
from ..substrate.training import fine_tune
from .base import RunOutput, Unlearner, forget_set, method_seed, sub_retain_indices


def adversarial_labels(
    arch: ArchSpec, params: torch.Tensor, inputs: torch.Tensor, labels: torch.Tensor, epsilon: float
) -> tuple[torch.Tensor, int]:
    """Label of each input after one sign-gradient step of size `epsilon` (FGSM), clamped to [0, 1].

    Samples whose predicted label does not move off the true label keep it. Returns the labels and the number of
    such failures.
    """
    if epsilon == 0 or len(labels) == 0:
        return labels.clone(), len(labels)
    x = inputs.detach().clone().requires_grad_(True)
    loss = F.cross_entropy(forward(arch, params.detach(), x), labels, reduction="sum")
    (grad,) = torch.autograd.grad(loss, x)
    x_adv = torch.clamp(x.detach() + epsilon * grad.sign(), 0.0, 1.0)
    with torch.no_grad():
        moved = forward(arch, params, x_adv).argmax(dim=1)
    failed = moved == labels
    return torch.where(failed, labels, moved), int(failed.sum())


class BoundaryShrink(Unlearner):
    """Relabel every forget sample with its nearest-boundary class and fine-tune on those pairs."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("boundary_shrink", "Boundary shrinking with adversarial labels")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Input step size on [0, 1] images and the fine-tune settings."""
        return {"epsilon": BOUNDARY_EPSILON, "epochs": BOUNDARY_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Relabel, then fit D_f to the new labels."""
        epsilon = float(hp["epsilon"])
        if epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {epsilon}")
        forget = forget_set(ctx)
        labels, failures = adversarial_labels(ctx.original.arch, ctx.original.params, forget.inputs, forget.labels, epsilon)
        fraction = failures / len(forget) if len(forget) else 0.0
        if fraction > 0.5:
            log.warning("boundary_shrink: %.0f%% of the forget samples kept their label", 100 * fraction)
        model = fine_tune(
            ctx.original,
            forget.replace(labels=labels, name=f"{forget.name}:adversarial"),
            epochs=int(hp["epochs"]),
            lr=float(hp["lr"]),
            batch_size=ctx.train_config.batch_size,
            seed=method_seed(ctx, self.method_id),
            stream=self.method_id,
            augment=ctx.augment_during_unlearning,
        )
        return RunOutput(model, {"adversarial_failure_fraction": fraction})


def shadow_dataset(ctx: UnlearnContext) -> LabeledDataset:
    """D_f relabelled to the shadow class C followed by the sub-retain set with its true labels, over C + 1 classes."""
    shadow = ctx.dataset.num_classes
    forget, retain = ctx.plan.forget_indices, sub_retain_indices(ctx)
    order = np.concatenate([forget, retain])
    labels = ctx.dataset.labels[torch.as_tensor(order)].clone()
    labels[: len(forget)] = shadow
    return LabeledDataset(
        name=f"{ctx.dataset.name}:shadow",
        inputs=ctx.dataset.inputs[torch.as_tensor(order)],
        labels=labels,
        num_classes=shadow + 1,
        split=ctx.dataset.split,
    )


class BoundaryExpand(Unlearner):
    """Push D_f into an extra shadow class, then drop that class's output row."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("boundary_expand", "Boundary expanding with a shadow class")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Fine-tune settings of the widened model."""
        return {"epochs": BOUNDARY_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Widen, fine-tune, narrow."""
        num_classes = ctx.original.arch.num_classes
        widened = fine_tune(
            widen_output(ctx.original),
            shadow_dataset(ctx),
            epochs=int(hp["epochs"]),
            lr=float(hp["lr"]),
            batch_size=ctx.train_config.batch_size,
            seed=method_seed(ctx, self.method_id),
            stream=self.method_id,
            augment=ctx.augment_during_unlearning,
        )
        return RunOutput(narrow_output(widened, num_classes))
