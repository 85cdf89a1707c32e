"""Re-initialisation methods: MSG (gradient-selected filters), CT (convolution transpose) and NIU (noisy layer re-init)."""

import logging as log
import math
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch

from ..constants import FINETUNE_LR, MSG_FRACTION, NIU_NOISE_SCALE, SHORT_FINETUNE_EPOCHS
from ..domain import ModelState, UnlearnContext
from ..substrate.autodiff import loss_gradient
from ..substrate.networks import OUTPUT_LAYER, layer_groups, layer_mask, reinit_layers, reinit_units, unit_slices
from ..support.seeding import numpy_rng, torch_generator
from .base import RunOutput, Unlearner, finetune_sub_retain, method_seed, sub_retain_indices


def select_filters(scores: np.ndarray | torch.Tensor, fraction: float) -> list[int]:
    """Indices of the ⌊fraction·n⌋ lowest-scoring units, lowest first. Ties keep index order."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    scores = np.asarray(scores, dtype=np.float64)
    count = int(math.floor(fraction * len(scores)))
    return np.argsort(scores, kind="stable")[:count].tolist()


def accumulated_gradient(ctx: UnlearnContext) -> torch.Tensor:
    """Ascent gradient of the forget loss plus descent gradient of the sub-retain loss, both at θ_o."""
    ascent = -loss_gradient(ctx.original, ctx.dataset, ctx.plan.forget_indices)
    return ascent + loss_gradient(ctx.original, ctx.dataset, sub_retain_indices(ctx))


def unit_scores(model: ModelState, gradient: torch.Tensor) -> dict[str, np.ndarray]:
    """Σ|g| over each filter of every convolution layer. Dense layers are not scored."""
    scores = {}
    for group in layer_groups(model.arch):
        if not group.is_conv:
            continue
        scores[group.name] = np.array([float(gradient[idx].abs().sum()) for idx in unit_slices(model.arch, group.name)])
    return scores


class Msg(Unlearner):
    """Re-initialise the units least involved in either forgetting or retaining, then fine-tune."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("msg", "Minimal-gradient filter re-initialisation")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Fraction q of units to re-initialise per layer."""
        return {"fraction": MSG_FRACTION, "epochs": SHORT_FINETUNE_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Score, re-initialise and fine-tune."""
        fraction = float(hp["fraction"])
        seed = method_seed(ctx, self.method_id)
        params, reset = ctx.original.params.detach().clone(), {}
        if fraction > 0:
            scores = unit_scores(ctx.original, accumulated_gradient(ctx))
            if not scores:
                log.warning("msg: %s has no convolution layers, only fine-tuning", ctx.original.arch.kind.value)
            for name, layer_scores in scores.items():
                units = select_filters(layer_scores, fraction)
                if units:
                    params = reinit_units(ctx.original.with_params(params), name, units, seed)
                reset[name] = len(units)
        model = finetune_sub_retain(
            ctx, ctx.original.with_params(params), epochs=int(hp["epochs"]), lr=float(hp["lr"]), stream=self.method_id
        )
        return RunOutput(model, {"reinitialised_units": reset})


def transpose_kernels(model: ModelState) -> ModelState:
    """Swap the two spatial axes of every convolution kernel. Dense layers are untouched."""
    params = model.params.detach().clone()
    for group in layer_groups(model.arch):
        if not group.is_conv:
            continue
        w = params[group.start : group.start + group.weight_size].reshape(group.weight_shape)
        params[group.start : group.start + group.weight_size] = w.transpose(-1, -2).reshape(-1)
    return model.with_params(params)


class Ct(Unlearner):
    """Transpose the convolution kernels, then fine-tune on the sub-retain set."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("ct", "Convolution transpose and fine-tune")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Fine-tune settings."""
        return {"epochs": SHORT_FINETUNE_EPOCHS, "lr": FINETUNE_LR}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Transpose, fine-tune."""
        if not any(group.is_conv for group in layer_groups(ctx.original.arch)):
            log.warning("ct: the %s network has no convolution layer, only fine-tuning applies", ctx.original.arch.kind.value)
        model = finetune_sub_retain(
            ctx, transpose_kernels(ctx.original), epochs=int(hp["epochs"]), lr=float(hp["lr"]), stream=self.method_id
        )
        return RunOutput(model)


def noisy_layers(model: ModelState, names: list[str], scale: float, seed: int) -> torch.Tensor:
    """Parameters with N(0, scale²) noise added to the named layers."""
    params = model.params.detach().clone()
    if scale == 0:
        return params
    mask = layer_mask(model.arch, names).to(torch.bool)
    noise = torch.randn(int(mask.sum()), generator=torch_generator(seed, "noise"), dtype=params.dtype)
    params[mask] = params[mask] + scale * noise
    return params


class Niu(Unlearner):
    """Re-initialise the head, perturb and retune a few random layers one at a time, then fine-tune everything."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("niu", "Noisy layer re-initialisation and fine-tune")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Layer count N, noise scale and the per-layer and final fine-tune epochs."""
        return {
            "n_layers": 1,
            "noise_scale": NIU_NOISE_SCALE,
            "layer_epochs": 1,
            "final_epochs": SHORT_FINETUNE_EPOCHS,
            "lr": FINETUNE_LR,
        }

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Head re-init, noisy per-layer tuning, full tuning."""
        seed = method_seed(ctx, self.method_id)
        lr = float(hp["lr"])
        model = ctx.original.with_params(reinit_layers(ctx.original, {OUTPUT_LAYER}, seed, OUTPUT_LAYER))
        candidates = [group.name for group in layer_groups(model.arch) if not group.is_output]
        count = min(int(hp["n_layers"]), len(candidates))
        chosen = [candidates[i] for i in sorted(numpy_rng(seed, "layers").choice(len(candidates), size=count, replace=False))]
        model = model.with_params(noisy_layers(model, chosen, float(hp["noise_scale"]), seed))
        for name in chosen:
            model = finetune_sub_retain(
                ctx,
                model,
                epochs=int(hp["layer_epochs"]),
                lr=lr,
                stream=f"niu-{name}",
                grad_mask=layer_mask(model.arch, {name, OUTPUT_LAYER}),
            )
        model = finetune_sub_retain(ctx, model, epochs=int(hp["final_epochs"]), lr=lr, stream=self.method_id)
        return RunOutput(model, {"noisy_layers": chosen})
