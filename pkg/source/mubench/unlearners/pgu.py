"""Projected-gradient unlearning: gradient ascent on D_f restricted to directions orthogonal to the retain subspace.

The weight gradient of a layer is a sum of outer products δ·xᵀ of output errors and layer inputs, so gradients
from retained data live in the span of the retained inputs. Each layer's basis comes from the eigenvectors of the
Gram matrix of stacked inputs (the right singular vectors of the representation matrix), truncated at an energy
threshold. Convolution inputs are unfolded into 3x3 patches first.
"""

import logging as log
from typing import Any, Callable, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import torch
import torch.nn.functional as F  # noqa: N812

from ..constants import FINETUNE_LR, PGU_ENERGY_THRESHOLD, PGU_EPOCHS, PGU_REPRESENTATION_SAMPLES
from ..domain import ModelState, UnlearnContext
from ..substrate.networks import LayerGroup, forward, layer_groups
from .base import RunOutput, Unlearner, forget_set, sub_retain_indices, train_custom


def layer_representations(model: ModelState, inputs: torch.Tensor) -> dict[str, torch.Tensor]:
    """Rows of layer inputs, one per sample (dense) or per patch position (conv), keyed by layer name."""
    captured: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        forward(model.arch, model.params, inputs, capture=captured)
    out = {}
    for group in layer_groups(model.arch):
        h = captured[group.name]
        if group.is_conv:
            patches = F.unfold(h, kernel_size=group.weight_shape[2:], padding=1)
            out[group.name] = patches.transpose(1, 2).reshape(-1, patches.shape[1])
        else:
            out[group.name] = h.reshape(len(h), -1)
    return out


def energy_basis(representations: torch.Tensor, threshold: float) -> torch.Tensor:
    """Orthonormal basis (columns) of the leading input directions holding `threshold` of the spectral energy.

    Raises:
        torch.linalg.LinAlgError: the eigendecomposition failed.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"energy threshold must lie in [0, 1], got {threshold}")
    r = representations.to(torch.float64)
    dim = r.shape[1]
    if threshold == 0 or len(r) == 0:
        return torch.zeros(dim, 0, dtype=torch.float64)
    values, vectors = torch.linalg.eigh(r.T @ r)
    values, vectors = values.flip(0).clamp(min=0.0), vectors.flip(1)
    total = float(values.sum())
    if total == 0:
        return torch.zeros(dim, 0, dtype=torch.float64)
    cumulative = torch.cumsum(values, 0) / total
    rank = int(torch.searchsorted(cumulative, torch.tensor(threshold, dtype=torch.float64))) + 1
    return vectors[:, : min(rank, dim)]


def project_out(gradient: torch.Tensor, basis: torch.Tensor) -> torch.Tensor:
    """G − G·U·Uᵀ for a weight gradient G of shape (out, in) and a basis U of shape (in, k)."""
    if basis.shape[1] == 0:
        return gradient
    g = gradient.to(torch.float64)
    return (g - (g @ basis) @ basis.T).to(gradient.dtype)


def projection(groups: list[LayerGroup], bases: dict[str, torch.Tensor]) -> Callable[[torch.Tensor], torch.Tensor]:
    """Gradient transform applying `project_out` to every layer with a basis. Biases pass through."""

    def transform(grad: torch.Tensor) -> torch.Tensor:
        out = grad.clone()
        for group in groups:
            basis = bases.get(group.name)
            if basis is None:
                continue
            w = grad[group.start : group.start + group.weight_size].reshape(group.weight_shape[0], -1)
            out[group.start : group.start + group.weight_size] = project_out(w, basis).reshape(-1)
        return out

    return transform


def retain_bases(model: ModelState, inputs: torch.Tensor, threshold: float) -> dict[str, Optional[torch.Tensor]]:
    """Per-layer bases; layers whose decomposition fails map to None and are left unprojected."""
    bases: dict[str, Optional[torch.Tensor]] = {}
    for name, rows in layer_representations(model, inputs).items():
        try:
            bases[name] = energy_basis(rows, threshold)
        except torch.linalg.LinAlgError:
            log.warning("pgu: decomposition failed on layer '%s', its gradient is not projected", name)
            bases[name] = None
    return bases


class Pgu(Unlearner):
    """Gradient ascent on the forget loss, projected off the sub-retain representation subspace."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("pgu", "Projected-gradient unlearning")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Energy threshold η, ascent settings and how many sub-retain samples define the subspace."""
        return {
            "energy": PGU_ENERGY_THRESHOLD,
            "epochs": PGU_EPOCHS,
            "lr": FINETUNE_LR,
            "representation_samples": PGU_REPRESENTATION_SAMPLES,
        }

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Collect bases, then ascend."""
        arch = ctx.original.arch
        sub = sub_retain_indices(ctx)
        sub = sub[: int(hp["representation_samples"])] if hp["representation_samples"] is not None else sub
        inputs = ctx.dataset.inputs[torch.as_tensor(sub)]
        bases = retain_bases(ctx.original, inputs, float(hp["energy"]))
        ranks = {name: (-1 if b is None else int(b.shape[1])) for name, b in bases.items()}
        log.debug("pgu: subspace ranks %s", ranks)
        usable = {name: b for name, b in bases.items() if b is not None}

        def ascent(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
            return -F.cross_entropy(forward(arch, params, x), y)

        params = train_custom(
            ctx.original.params,
            forget_set(ctx),
            ascent,
            ctx,
            epochs=int(hp["epochs"]),
            lr=float(hp["lr"]),
            stream=self.method_id,
            grad_transform=projection(layer_groups(arch), usable),
            momentum=0.0,
        )
        return RunOutput(ctx.original.with_params(params), {"subspace_ranks": ranks, "retain_samples": len(sub)})
