"""Functional network definitions.

A model is its `ArchSpec` plus one flat parameter vector, so forward passes are written against named views
of that vector with `torch.nn.functional` rather than stateful `nn.Module`s. This keeps per-sample gradients,
Hessian-vector products, masks and checkpoints all operating on the same tensor.
"""

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F  # noqa: N812

from ..config import ArchKind
from ..domain import ArchSpec, ModelState, ShapeMismatchError
from ..support.seeding import torch_generator

OUTPUT_LAYER = "head"


@dataclass(frozen=True)
class LayerGroup:
    """A weight/bias pair and its slice of the flat parameter vector."""

    name: str
    start: int
    stop: int
    weight_shape: tuple[int, ...]
    is_conv: bool

    @property
    def is_output(self) -> bool:
        """True for the classifier head."""
        return self.name == OUTPUT_LAYER

    @property
    def weight_size(self) -> int:
        """Number of weight entries (the bias follows them)."""
        return math.prod(self.weight_shape)


def layer_groups(arch: ArchSpec) -> list[LayerGroup]:
    """Layers in forward order."""
    groups, offset = [], 0
    layers = arch.layers()
    for (w_name, w_shape), (_, b_shape) in zip(layers[0::2], layers[1::2]):
        size = math.prod(w_shape) + math.prod(b_shape)
        groups.append(LayerGroup(w_name.split(".")[0], offset, offset + size, w_shape, len(w_shape) == 4))
        offset += size
    return groups


def layer_mask(arch: ArchSpec, names: list[str] | set[str]) -> torch.Tensor:
    """1.0 over the parameters of the named layers, 0.0 elsewhere."""
    mask = torch.zeros(arch.param_count())
    for group in layer_groups(arch):
        if group.name in names:
            mask[group.start : group.stop] = 1.0
    return mask


def unflatten(arch: ArchSpec, params: torch.Tensor) -> dict[str, torch.Tensor]:
    """Named views of a flat parameter vector. Views keep the autograd graph to `params`."""
    out, offset = {}, 0
    for name, shape in arch.layers():
        size = math.prod(shape)
        out[name] = params[offset : offset + size].view(shape)
        offset += size
    return out


def _init_layer(group: LayerGroup, generator: torch.Generator, dtype: torch.dtype) -> torch.Tensor:
    """PyTorch's default layer init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias."""
    fan_in = math.prod(group.weight_shape[1:])
    bound = 1.0 / math.sqrt(fan_in)
    size = group.stop - group.start
    return (torch.rand(size, generator=generator, dtype=dtype) * 2.0 - 1.0) * bound


def init_params(arch: ArchSpec, seed: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fresh flat parameters drawn from the `init` stream of `seed`."""
    generator = torch_generator(seed, "init")
    return torch.cat([_init_layer(group, generator, dtype) for group in layer_groups(arch)])


def init_model(arch: ArchSpec, seed: int, dtype: torch.dtype = torch.float32) -> ModelState:
    """Untrained model (θ_0) for a seed."""
    return ModelState(arch=arch, params=init_params(arch, seed, dtype), seed=seed, trained_on="", epochs=0)


def reinit_layers(model: ModelState, names: list[str] | set[str], seed: int, *stream: object) -> torch.Tensor:
    """Copy of the model's parameters with the named layers redrawn from a fresh stream."""
    params = model.params.detach().clone()
    generator = torch_generator(seed, "reinit", *stream)
    for group in layer_groups(model.arch):
        if group.name in names:
            params[group.start : group.stop] = _init_layer(group, generator, params.dtype)
    return params


def check_inputs(arch: ArchSpec, inputs: torch.Tensor) -> None:
    """Reject inputs whose per-sample shape differs from the architecture's."""
    if tuple(inputs.shape[1:]) != tuple(arch.input_shape):
        raise ShapeMismatchError(f"input shape {tuple(inputs.shape[1:])} does not match arch {arch.input_shape}")


def forward(
    arch: ArchSpec, params: torch.Tensor, inputs: torch.Tensor, capture: Optional[dict[str, torch.Tensor]] = None
) -> torch.Tensor:
    """Logits for a batch of inputs.

    Args:
        arch: Architecture descriptor.
        params: Flat parameter vector.
        inputs: Batch of shape (N, C, H, W).
        capture: When given, filled with the input of every layer, keyed by layer name.
    """
    t = unflatten(arch, params)
    h = inputs.to(params.dtype)
    if arch.kind == ArchKind.CNN:
        for i in range(1, len(arch.widths) + 1):
            if capture is not None:
                capture[f"conv{i}"] = h
            h = F.max_pool2d(F.relu(F.conv2d(h, t[f"conv{i}.weight"], t[f"conv{i}.bias"], padding=1)), 2)
    h = h.flatten(1)
    if arch.kind in (ArchKind.MLP, ArchKind.CNN):
        if capture is not None:
            capture["hidden"] = h
        h = F.relu(F.linear(h, t["hidden.weight"], t["hidden.bias"]))
    if capture is not None:
        capture[OUTPUT_LAYER] = h
    return F.linear(h, t["head.weight"], t["head.bias"])


def widen_output(model: ModelState) -> ModelState:
    """Add one zero-initialised output row (a shadow class). The first C logits are unchanged."""
    arch = model.arch.with_classes(model.arch.num_classes + 1)
    t = {name: v.clone() for name, v in model.tensors().items()}
    t["head.weight"] = torch.cat([t["head.weight"], torch.zeros_like(t["head.weight"][:1])])
    t["head.bias"] = torch.cat([t["head.bias"], torch.zeros_like(t["head.bias"][:1])])
    return ModelState.from_tensors(
        arch, t, seed=model.seed, trained_on=model.trained_on, epochs=model.epochs, train_accuracy=model.train_accuracy
    )


def narrow_output(model: ModelState, num_classes: int) -> ModelState:
    """Drop output rows beyond `num_classes`."""
    arch = model.arch.with_classes(num_classes)
    t = {name: v.clone() for name, v in model.tensors().items()}
    t["head.weight"] = t["head.weight"][:num_classes]
    t["head.bias"] = t["head.bias"][:num_classes]
    return ModelState.from_tensors(
        arch, t, seed=model.seed, trained_on=model.trained_on, epochs=model.epochs, train_accuracy=model.train_accuracy
    )


def unit_slices(arch: ArchSpec, name: str) -> list[torch.Tensor]:
    """Flat parameter indices of each output unit (conv filter or dense neuron) of a layer, bias entry included."""
    group = next((g for g in layer_groups(arch) if g.name == name), None)
    if group is None:
        raise ValueError(f"'{name}' is not a layer of this {arch.kind.value} network")
    units, per_unit = group.weight_shape[0], group.weight_size // group.weight_shape[0]
    out = []
    for u in range(units):
        weights = torch.arange(group.start + u * per_unit, group.start + (u + 1) * per_unit)
        out.append(torch.cat([weights, torch.tensor([group.start + group.weight_size + u])]))
    return out


def reinit_units(model: ModelState, name: str, units: list[int], seed: int, *stream: object) -> torch.Tensor:
    """Copy of the model's parameters with some filters/neurons of one layer redrawn from the default init."""
    params = model.params.detach().clone()
    group = next(g for g in layer_groups(model.arch) if g.name == name)
    bound = 1.0 / math.sqrt(math.prod(group.weight_shape[1:]))
    generator = torch_generator(seed, "reinit", name, *stream)
    slices = unit_slices(model.arch, name)
    for u in units:
        idx = slices[u]
        params[idx] = (torch.rand(len(idx), generator=generator, dtype=params.dtype) * 2.0 - 1.0) * bound
    return params
