"""Fisher-information methods: Fisher noise injection and Selective Synaptic Dampening (SSD)."""

import logging as log
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import torch

from ..constants import FISHER_ALPHA, FISHER_FLOOR, SSD_ALPHA, SSD_LAMBDA
from ..domain import ModelState, UnlearnContext
from ..substrate.autodiff import fisher_diagonal
from ..support.seeding import torch_generator
from .base import RunOutput, Unlearner, method_seed


def fisher_noise(model: ModelState, fim: torch.Tensor, alpha: float, floor: float, seed: int) -> ModelState:
    """θ + α^{1/2}·ε/√(FIM + floor) with ε ~ N(0, I) from the `noise` stream of `seed`."""
    if alpha == 0:
        return model.with_params(model.params)
    eps = torch.randn(model.params.shape, generator=torch_generator(seed, "noise"), dtype=model.params.dtype)
    scale = alpha**0.5 / torch.sqrt(fim.to(model.params.dtype) + floor)
    return model.with_params(model.params + scale * eps)


def ssd_selection(fim_all: torch.Tensor, fim_forget: torch.Tensor, alpha: float) -> torch.Tensor:
    """Parameters that matter more to the forget set than α times their importance to D."""
    return fim_forget > alpha * fim_all


def ssd_dampen(params: torch.Tensor, fim_all: torch.Tensor, fim_forget: torch.Tensor, alpha: float, lam: float) -> torch.Tensor:
    """Multiply every selected parameter by β = min(λ·FIM_D / FIM_f, 1). Unselected parameters are untouched."""
    selected = ssd_selection(fim_all, fim_forget, alpha)
    out = params.detach().clone()
    beta = torch.clamp(lam * fim_all[selected] / fim_forget[selected], max=1.0)
    out[selected] = out[selected] * beta.to(out.dtype)
    return out


class Fisher(Unlearner):
    """Gaussian noise shaped by the inverse diagonal Fisher information of the retain set."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("fisher", "Fisher forgetting")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Noise scale, curvature floor and an optional sample cap for the Fisher estimate."""
        return {"alpha": FISHER_ALPHA, "floor": FISHER_FLOOR, "max_samples": None, "mode": "empirical"}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Estimate FIM on D_r and add the shaped noise."""
        alpha = float(hp["alpha"])
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        if alpha == 0:
            return RunOutput(ctx.original.with_params(ctx.original.params))
        seed = method_seed(ctx, self.method_id)
        fim = fisher_diagonal(
            ctx.original, ctx.dataset, ctx.plan.retain_indices, mode=hp["mode"], max_samples=hp["max_samples"], seed=seed
        )
        model = fisher_noise(ctx.original, fim, alpha, float(hp["floor"]), seed)
        return RunOutput(model, {"fim_zero_fraction": float((fim == 0).float().mean())})


class Ssd(Unlearner):
    """Selective Synaptic Dampening: shrink parameters specialised to the forget set."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("ssd", "Selective synaptic dampening")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Selection weighting α and dampening constant λ."""
        return {"alpha": SSD_ALPHA, "lambda": SSD_LAMBDA, "max_samples": None}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Compare Fisher importances over D and D_f, then dampen."""
        if len(ctx.plan.forget_indices) == 0:
            return RunOutput(ctx.original.with_params(ctx.original.params), {"selected": 0})
        seed = method_seed(ctx, self.method_id)
        fim_all = fisher_diagonal(ctx.original, ctx.dataset, max_samples=hp["max_samples"], seed=seed)
        fim_forget = fisher_diagonal(ctx.original, ctx.dataset, ctx.plan.forget_indices, max_samples=hp["max_samples"], seed=seed)
        alpha, lam = float(hp["alpha"]), float(hp["lambda"])
        selected = int(ssd_selection(fim_all, fim_forget, alpha).sum())
        log.debug("ssd: %d of %d parameters selected", selected, fim_all.numel())
        params = ssd_dampen(ctx.original.params, fim_all, fim_forget, alpha, lam)
        return RunOutput(ctx.original.with_params(params), {"selected": selected})
