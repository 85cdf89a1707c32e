"""Synthetic-noise methods for class-wise forgetting: UNSIR (impair and repair) and GKT (zero-shot, noise only)."""

import logging as log
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812

from ..constants import FINETUNE_LR, NOISE_LR, NOISE_REGULARIZATION, NOISE_SAMPLES, NOISE_STEPS, SHORT_FINETUNE_EPOCHS
from ..domain import LabeledDataset, ModelState, UnlearnContext
from ..substrate.networks import forward
from ..substrate.training import fine_tune
from ..support.seeding import torch_generator
from .base import RunOutput, Unlearner, finetune_sub_retain, method_seed, sub_retain_indices


def _optimise_noise(
    model: ModelState,
    class_id: int,
    count: int,
    *,
    maximize: bool,
    steps: int,
    lr: float,
    regularization: float,
    seed: int,
) -> tuple[torch.Tensor, list[float]]:
    """Plain gradient steps on a noise batch labelled `class_id`. The trace holds the class loss before each step and after the last."""
    generator = torch_generator(seed, "noise", class_id)
    noise = torch.randn((count, *model.arch.input_shape), generator=generator).requires_grad_(True)
    optimizer = torch.optim.SGD([noise], lr=lr)
    target = torch.full((count,), class_id, dtype=torch.int64)
    params = model.params.detach()
    trace = []
    for _ in range(steps):
        optimizer.zero_grad(set_to_none=True)
        ce = F.cross_entropy(forward(model.arch, params, noise), target)
        trace.append(float(ce))
        penalty = regularization * noise.square().sum(dim=(1, 2, 3)).mean()
        # SGD minimises, so ascent flips the sign of the class loss
        objective = (-ce if maximize else ce) + penalty
        objective.backward()
        optimizer.step()
    with torch.no_grad():
        trace.append(float(F.cross_entropy(forward(model.arch, params, noise), target)))
    return noise.detach(), trace


def error_maximizing_noise(
    model: ModelState,
    class_id: int,
    count: int,
    *,
    steps: int = NOISE_STEPS,
    lr: float = NOISE_LR,
    regularization: float = NOISE_REGULARIZATION,
    seed: int = 0,
) -> tuple[torch.Tensor, list[float]]:
    """Noise inputs that maximise the loss of `class_id`, plus the loss trace."""
    return _optimise_noise(
        model, class_id, count, maximize=True, steps=steps, lr=lr, regularization=regularization, seed=seed
    )


def error_minimizing_noise(
    model: ModelState,
    class_id: int,
    count: int,
    *,
    steps: int = NOISE_STEPS,
    lr: float = NOISE_LR,
    regularization: float = NOISE_REGULARIZATION,
    seed: int = 0,
) -> tuple[torch.Tensor, list[float]]:
    """Noise inputs that minimise the loss of `class_id`, plus the loss trace."""
    return _optimise_noise(
        model, class_id, count, maximize=False, steps=steps, lr=lr, regularization=regularization, seed=seed
    )


def _synthetic(reference: LabeledDataset, inputs: torch.Tensor, labels: torch.Tensor, name: str) -> LabeledDataset:
    return LabeledDataset(name=name, inputs=inputs, labels=labels, num_classes=reference.num_classes, split=reference.split)


def _noise_defaults() -> dict[str, Any]:
    return {"noise_samples": NOISE_SAMPLES, "noise_steps": NOISE_STEPS, "noise_lr": NOISE_LR, "regularization": NOISE_REGULARIZATION}


class Unsir(Unlearner):
    """Impair with error-maximising noise for the forget class, then repair on the sub-retain set."""

    class_wise_only = True

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("unsir", "Error-maximising noise impair and repair")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Noise optimisation and impair/repair settings."""
        return {**_noise_defaults(), "impair_epochs": 1, "repair_epochs": 1, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Learn the noise, impair, repair."""
        forget_class = int(ctx.plan.target_class)
        seed = method_seed(ctx, self.method_id)
        noise, trace = error_maximizing_noise(
            ctx.original,
            forget_class,
            int(hp["noise_samples"]),
            steps=int(hp["noise_steps"]),
            lr=float(hp["noise_lr"]),
            regularization=float(hp["regularization"]),
            seed=seed,
        )
        retain = ctx.dataset.subset(sub_retain_indices(ctx))
        impair_set = _synthetic(
            ctx.dataset,
            torch.cat([noise, retain.inputs]),
            torch.cat([torch.full((len(noise),), forget_class, dtype=torch.int64), retain.labels]),
            f"{ctx.dataset.name}:unsir_impair",
        )
        model = fine_tune(
            ctx.original,
            impair_set,
            epochs=int(hp["impair_epochs"]),
            lr=float(hp["lr"]),
            batch_size=ctx.train_config.batch_size,
            seed=seed,
            stream="unsir-impair",
        )
        model = finetune_sub_retain(ctx, model, epochs=int(hp["repair_epochs"]), lr=float(hp["lr"]), stream="unsir-repair")
        return RunOutput(model, {"noise_loss_start": trace[0], "noise_loss_end": trace[-1]})


class Gkt(Unlearner):
    """Zero-shot forgetting: fine-tune on error-maximising forget-class noise and error-minimising retain-class noise only."""

    class_wise_only = True

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("gkt", "Zero-shot forgetting from synthetic noise")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """`noise_samples` is per class."""
        return {**_noise_defaults(), "epochs": SHORT_FINETUNE_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Build the synthetic set class by class and fine-tune on it."""
        forget_class = int(ctx.plan.target_class)
        seed = method_seed(ctx, self.method_id)
        settings = {"steps": int(hp["noise_steps"]), "lr": float(hp["noise_lr"]), "regularization": float(hp["regularization"]), "seed": seed}
        count = int(hp["noise_samples"])
        inputs, labels, end_losses = [], [], {}
        for class_id in range(ctx.dataset.num_classes):
            make = error_maximizing_noise if class_id == forget_class else error_minimizing_noise
            noise, trace = make(ctx.original, class_id, count, **settings)
            inputs.append(noise)
            labels.append(torch.full((count,), class_id, dtype=torch.int64))
            end_losses[class_id] = trace[-1]
        retained_losses = [v for k, v in end_losses.items() if k != forget_class]
        if retained_losses and float(np.mean(retained_losses)) >= np.log(ctx.dataset.num_classes):
            log.warning("gkt: error-minimising noise stayed above chance-level loss")
        synthetic = _synthetic(ctx.dataset, torch.cat(inputs), torch.cat(labels), f"{ctx.dataset.name}:gkt")
        model = fine_tune(
            ctx.original,
            synthetic,
            epochs=int(hp["epochs"]),
            lr=float(hp["lr"]),
            batch_size=ctx.train_config.batch_size,
            seed=seed,
            stream=self.method_id,
        )
        return RunOutput(model, {"noise_class_losses": end_losses})
