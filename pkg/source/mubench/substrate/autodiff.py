"""Gradients, Fisher diagonals and Hessian-vector products over flat parameter vectors."""

import logging as log
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from torch.func import grad, vmap

from ..domain import ArchSpec, EmptyDatasetError, LabeledDataset, ModelState
from ..support.seeding import torch_generator
from .networks import check_inputs, forward

_CHUNK = 256


def loss_on(
    arch: ArchSpec, params: torch.Tensor, inputs: torch.Tensor, labels: torch.Tensor, reduction: str = "sum"
) -> torch.Tensor:
    """Cross-entropy of `params` on a batch."""
    return F.cross_entropy(forward(arch, params, inputs), labels, reduction=reduction)


def _select(dataset: LabeledDataset, indices: Optional[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    if indices is None:
        return dataset.inputs, dataset.labels
    idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
    return dataset.inputs[idx], dataset.labels[idx]


def loss_gradient(model: ModelState, dataset: LabeledDataset, indices: Optional[np.ndarray] = None) -> torch.Tensor:
    """Σ_i ∇ℓ(z_i; θ) over the selected samples. An empty selection gives the zero vector."""
    inputs, labels = _select(dataset, indices)
    total = torch.zeros_like(model.params)
    if len(labels) == 0:
        return total
    check_inputs(model.arch, inputs)
    for start in range(0, len(labels), _CHUNK):
        p = model.params.detach().clone().requires_grad_(True)
        loss = loss_on(model.arch, p, inputs[start : start + _CHUNK], labels[start : start + _CHUNK])
        (g,) = torch.autograd.grad(loss, p)
        total += g
    return total


def per_sample_gradients(model: ModelState, inputs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Gradient of each sample's loss, shape (N, num_params)."""
    check_inputs(model.arch, inputs)
    arch = model.arch

    def single(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return loss_on(arch, params, x.unsqueeze(0), y.unsqueeze(0))

    per_sample = vmap(grad(single), in_dims=(None, 0, 0))
    params = model.params.detach()
    return torch.cat([per_sample(params, inputs[i : i + _CHUNK], labels[i : i + _CHUNK]) for i in range(0, len(labels), _CHUNK)])


def fisher_diagonal(
    model: ModelState,
    dataset: LabeledDataset,
    indices: Optional[np.ndarray] = None,
    *,
    mode: Literal["empirical", "expected"] = "empirical",
    max_samples: Optional[int] = None,
    seed: int = 0,
) -> torch.Tensor:
    """Diagonal Fisher information, the mean of squared per-sample gradients.

    `empirical` uses the true labels. `expected` weights every class by the model's predicted probability.
    `max_samples` subsamples the selection with the `fisher` stream of `seed`.
    """
    inputs, labels = _select(dataset, indices)
    if len(labels) == 0:
        raise EmptyDatasetError("Fisher information needs at least one sample")
    if max_samples is not None and len(labels) > max_samples:
        pick = torch.randperm(len(labels), generator=torch_generator(seed, "fisher"))[:max_samples]
        inputs, labels = inputs[pick], labels[pick]

    fim = torch.zeros_like(model.params)
    if mode == "empirical":
        for start in range(0, len(labels), _CHUNK):
            g = per_sample_gradients(model, inputs[start : start + _CHUNK], labels[start : start + _CHUNK])
            fim += (g**2).sum(dim=0)
    else:
        with torch.no_grad():
            probs = torch.softmax(forward(model.arch, model.params, inputs), dim=1)
        for c in range(model.arch.num_classes):
            forced = torch.full_like(labels, c)
            for start in range(0, len(labels), _CHUNK):
                g = per_sample_gradients(model, inputs[start : start + _CHUNK], forced[start : start + _CHUNK])
                fim += (probs[start : start + _CHUNK, c : c + 1] * g**2).sum(dim=0)
    return fim / len(labels)


def hessian_vector_product(
    model: ModelState, dataset: LabeledDataset, indices: Optional[np.ndarray] = None
) -> Callable[[torch.Tensor], torch.Tensor]:
    """Closure v -> H v for the summed loss over the selection, by double backprop."""
    inputs, labels = _select(dataset, indices)
    if len(labels) == 0:
        raise EmptyDatasetError("Hessian needs at least one sample")
    check_inputs(model.arch, inputs)
    arch, base = model.arch, model.params.detach()

    def hvp(v: torch.Tensor) -> torch.Tensor:
        out = torch.zeros_like(base)
        for start in range(0, len(labels), _CHUNK):
            p = base.clone().requires_grad_(True)
            loss = loss_on(arch, p, inputs[start : start + _CHUNK], labels[start : start + _CHUNK])
            (g,) = torch.autograd.grad(loss, p, create_graph=True)
            (hv,) = torch.autograd.grad(g @ v.to(g.dtype), p)
            out += hv
        return out

    return hvp


@dataclass
class CgOutcome:
    """Result of a conjugate gradient solve."""

    x: torch.Tensor
    converged: bool
    iterations: int
    residual: float


def conjugate_gradient(
    hvp: Callable[[torch.Tensor], torch.Tensor],
    b: torch.Tensor,
    *,
    damping: float = 0.0,
    max_iterations: int = 100,
    tolerance: float = 1e-10,
) -> CgOutcome:
    """Solve (H + damping I) x = b without materialising H.

    When the residual does not fall below `tolerance * |b|` within `max_iterations`, the iterate with the smallest
    residual is returned with `converged=False`.
    """
    x = torch.zeros_like(b)
    b_norm = float(b.norm())
    if b_norm == 0.0:
        return CgOutcome(x, True, 0, 0.0)

    def apply(v: torch.Tensor) -> torch.Tensor:
        return hvp(v) + damping * v

    r = b.clone()
    p = r.clone()
    rs = float(r @ r)
    best_x, best_res = x.clone(), rs**0.5
    for it in range(1, max_iterations + 1):
        ap = apply(p)
        curvature = float(p @ ap)
        if curvature <= 0:
            log.warning("conjugate_gradient() - non-positive curvature %.3g at iteration %d", curvature, it)
            return CgOutcome(best_x, False, it, best_res)
        alpha = rs / curvature
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        res = rs_new**0.5
        if res < best_res:
            best_x, best_res = x.clone(), res
        if res <= tolerance * b_norm:
            return CgOutcome(x, True, it, res)
        p = r + (rs_new / rs) * p
        rs = rs_new
    log.warning("conjugate_gradient() - no convergence after %d iterations (residual %.3g)", max_iterations, best_res)
    return CgOutcome(best_x, False, max_iterations, best_res)
