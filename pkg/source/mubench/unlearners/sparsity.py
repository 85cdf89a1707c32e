"""Weight-selective methods: SalUn (saliency-masked random labelling) and ℓ1-sparse fine-tuning."""

import logging as log
import math
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch

from ..constants import FINETUNE_LR, L1_GAMMA, L1_SPARSE_EPOCHS, SALUN_EPOCHS, SALUN_FRACTION
from ..domain import LabeledDataset, ModelState, UnlearnContext
from ..substrate.autodiff import loss_gradient
from ..substrate.training import fine_tune
from ..support.seeding import numpy_rng
from .base import RunOutput, Unlearner, method_seed, sub_retain_indices
from .losses import l1_penalty


def salun_mask(model: ModelState, dataset: LabeledDataset, forget: np.ndarray, fraction: float) -> torch.Tensor:
    """0/1 mask over θ selecting the ⌈fraction·|θ|⌉ weights with the largest |∇θ ℓ(D_f; θ)|. Ties keep index order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"saliency fraction must lie in (0, 1], got {fraction}")
    n = model.params.numel()
    count = min(n, math.ceil(fraction * n))
    mask = torch.zeros(n, dtype=model.params.dtype)
    if count == n:
        return mask + 1
    saliency = loss_gradient(model, dataset, forget).abs()
    top = torch.argsort(-saliency, stable=True)[:count]
    mask[top] = 1
    return mask


def random_other_labels(labels: torch.Tensor, num_classes: int, seed: int) -> torch.Tensor:
    """A label drawn uniformly from the classes other than the true one, for each sample."""
    shift = numpy_rng(seed, "random_labels").integers(1, num_classes, size=len(labels))
    return (labels + torch.from_numpy(shift)) % num_classes


class SalUn(Unlearner):
    """Fine-tune only the most forget-salient weights on randomly relabelled D_f plus the sub-retain set."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("salun", "Saliency unlearning")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Saliency fraction and fine-tune settings."""
        return {"fraction": SALUN_FRACTION, "epochs": SALUN_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Build the mask, relabel D_f and fine-tune under the mask."""
        mask = salun_mask(ctx.original, ctx.dataset, ctx.plan.forget_indices, float(hp["fraction"]))
        seed = method_seed(ctx, self.method_id)
        forget, retain = ctx.plan.forget_indices, sub_retain_indices(ctx)
        combined = ctx.dataset.subset(np.concatenate([forget, retain]), name=f"{ctx.dataset.name}:salun")
        labels = combined.labels.clone()
        labels[: len(forget)] = random_other_labels(labels[: len(forget)], ctx.dataset.num_classes, seed)
        model = fine_tune(
            ctx.original,
            combined.replace(labels=labels),
            epochs=int(hp["epochs"]),
            lr=float(hp["lr"]),
            batch_size=ctx.train_config.batch_size,
            seed=seed,
            stream=self.method_id,
            grad_mask=mask,
            augment=ctx.augment_during_unlearning,
        )
        return RunOutput(model, {"masked_fraction": float(mask.mean())})


def magnitude_prune(params: torch.Tensor, sparsity: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero the ⌊sparsity·|θ|⌋ smallest-magnitude entries. Returns the pruned vector and the 0/1 mask of survivors."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    pruned, keep = params.detach().clone(), torch.ones_like(params)
    count = int(math.floor(sparsity * params.numel()))
    if count:
        smallest = torch.argsort(params.abs(), stable=True)[:count]
        pruned[smallest] = 0
        keep[smallest] = 0
    return pruned, keep


class L1Sparse(Unlearner):
    """Optional magnitude pruning, then sub-retain fine-tuning with an ℓ1 penalty."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("l1_sparse", "ℓ1-sparse fine-tuning")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Penalty weight γ, pruning sparsity and fine-tune settings."""
        return {"gamma": L1_GAMMA, "sparsity": 0.0, "epochs": L1_SPARSE_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Prune, then fine-tune with the penalty. Pruned entries stay at zero."""
        gamma = float(hp["gamma"])
        if gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {gamma}")
        pruned, keep = magnitude_prune(ctx.original.params, float(hp["sparsity"]))
        log.debug("l1_sparse: %d parameters pruned", int((keep == 0).sum()))
        model = fine_tune(
            ctx.original.with_params(pruned),
            ctx.dataset.subset(sub_retain_indices(ctx), name=f"{ctx.dataset.name}:sub_retain"),
            epochs=int(hp["epochs"]),
            lr=float(hp["lr"]),
            batch_size=ctx.train_config.batch_size,
            seed=method_seed(ctx, self.method_id),
            stream=self.method_id,
            extra_loss=(lambda p: l1_penalty(p, gamma)) if gamma else None,
            grad_mask=keep if bool((keep == 0).any()) else None,
            augment=ctx.augment_during_unlearning,
        )
        return RunOutput(model, {"sparsity": float((model.params == 0).float().mean())})
