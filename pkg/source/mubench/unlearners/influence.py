"""Influence-function updates: one closed-form step from θ_o, no fine-tuning.

For pure removal the replacement set is empty, so the update direction is the summed forget-set gradient.
"""

import logging as log
from typing import Any, Callable, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch

from ..constants import CG_DAMPING, CG_MAX_ITERATIONS, CG_TOLERANCE, FIRST_ORDER_TAU
from ..domain import ModelState, TrainingDivergedError, UnlearnContext
from ..substrate.autodiff import CgOutcome, conjugate_gradient, hessian_vector_product, loss_gradient
from ..support.seeding import numpy_rng
from .base import RunOutput, Unlearner


def _finite(g: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(g).all():
        raise TrainingDivergedError(f"non-finite values in the {what}")
    return g


def first_order_update(model: ModelState, forget_gradient: torch.Tensor, tau: float) -> ModelState:
    """θ_o − τ(Σ∇ℓ(z̃; θ_o) − Σ∇ℓ(z; θ_o)) with no replacements, i.e. θ_o + τ·Σ∇ℓ(z; θ_o)."""
    if tau == 0:
        return model.with_params(model.params)
    return model.with_params(model.params + tau * _finite(forget_gradient, "forget gradient"))


def second_order_update(
    model: ModelState,
    forget_gradient: torch.Tensor,
    hvp: Callable[[torch.Tensor], torch.Tensor],
    *,
    damping: float = CG_DAMPING,
    max_iterations: int = CG_MAX_ITERATIONS,
    tolerance: float = CG_TOLERANCE,
) -> tuple[ModelState, CgOutcome]:
    """θ_o + H⁻¹·Σ∇ℓ(z; θ_o), with H⁻¹g found by damped conjugate gradients."""
    g = _finite(forget_gradient, "forget gradient")
    outcome = conjugate_gradient(hvp, g, damping=damping, max_iterations=max_iterations, tolerance=tolerance)
    return model.with_params(model.params + _finite(outcome.x, "inverse-Hessian product")), outcome


class FirstOrder(Unlearner):
    """Single gradient step on the forget set, scaled by the unlearning rate τ."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("first_order", "First-order influence update")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """`tau` of None picks the per-scenario literature rate."""
        return {"tau": None}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Apply the update."""
        tau = FIRST_ORDER_TAU[ctx.plan.kind] if hp["tau"] is None else float(hp["tau"])
        if tau < 0:
            raise ValueError(f"tau must be >= 0, got {tau}")
        if tau == 0 or len(ctx.plan.forget_indices) == 0:
            return RunOutput(ctx.original.with_params(ctx.original.params), {"tau": tau})
        g = loss_gradient(ctx.original, ctx.dataset, ctx.plan.forget_indices)
        return RunOutput(first_order_update(ctx.original, g, tau), {"tau": tau})


class SecondOrder(Unlearner):
    """Newton step with the Hessian of the training loss at θ_o, inverted by conjugate gradients."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("second_order", "Second-order influence update")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """CG settings. `hessian_samples` subsamples D for the Hessian (None uses all of it)."""
        return {
            "damping": CG_DAMPING,
            "max_iterations": CG_MAX_ITERATIONS,
            "tolerance": CG_TOLERANCE,
            "hessian_samples": 2000,
        }

    def _hessian(self: Self, ctx: UnlearnContext, samples: Optional[int]) -> Callable[[torch.Tensor], torch.Tensor]:
        """HVP of the summed training loss, estimated on a seeded subsample and rescaled to |D|."""
        n = len(ctx.dataset)
        if samples is None or samples >= n:
            return hessian_vector_product(ctx.original, ctx.dataset)
        pick = np.sort(numpy_rng(ctx.train_config.seed, "second_order", "hessian").choice(n, size=samples, replace=False))
        partial = hessian_vector_product(ctx.original, ctx.dataset, pick)
        scale = n / samples
        return lambda v: scale * partial(v)

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Solve H v = g and step."""
        if len(ctx.plan.forget_indices) == 0:
            return RunOutput(ctx.original.with_params(ctx.original.params), {"cg_converged": True, "cg_iterations": 0})
        g = loss_gradient(ctx.original, ctx.dataset, ctx.plan.forget_indices)
        samples = None if hp["hessian_samples"] is None else int(hp["hessian_samples"])
        model, outcome = second_order_update(
            ctx.original,
            g,
            self._hessian(ctx, samples),
            damping=float(hp["damping"]),
            max_iterations=int(hp["max_iterations"]),
            tolerance=float(hp["tolerance"]),
        )
        diagnostics = {"cg_converged": outcome.converged, "cg_iterations": outcome.iterations, "cg_residual": outcome.residual}
        if not outcome.converged:
            log.warning("second_order: CG stopped after %d iterations, using the best iterate", outcome.iterations)
            diagnostics["warning"] = "cg_not_converged"
        return RunOutput(model, diagnostics)
