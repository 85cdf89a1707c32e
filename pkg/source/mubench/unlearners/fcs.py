"""Forget-contrast shaping (FCS): flatten the outputs on D_f towards uniform and push them away from retained outputs."""

from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import torch
import torch.nn.functional as F  # noqa: N812

from ..constants import FINETUNE_LR, SHORT_FINETUNE_EPOCHS
from ..domain import ArchSpec, UnlearnContext
from ..substrate.networks import forward
from ..substrate.training import LossFn
from ..support.seeding import torch_generator
from .base import RunOutput, Unlearner, finetune_sub_retain, forget_set, method_seed, sub_retain_set, train_custom
from .losses import uniform_kl


def output_similarity(forget_logits: torch.Tensor, retain_logits: torch.Tensor) -> torch.Tensor:
    """Mean pairwise cosine similarity between the softmax outputs of two batches."""
    p = F.normalize(F.softmax(forget_logits, dim=1), dim=1)
    q = F.normalize(F.softmax(retain_logits, dim=1), dim=1)
    return (p @ q.T).mean()


def contrastive_loss(arch: ArchSpec, retain_inputs: torch.Tensor, batch_size: int, weight: float, seed: int) -> LossFn:
    """Uniform-KL on a forget batch plus `weight` times its similarity to a freshly drawn retain batch."""
    generator = torch_generator(seed, "contrast")

    def loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        pick = torch.randint(len(retain_inputs), (min(batch_size, len(retain_inputs)),), generator=generator)
        out = forward(arch, params, x)
        with torch.no_grad():
            anchor = forward(arch, params.detach(), retain_inputs[pick])
        return uniform_kl(out) + weight * output_similarity(out, anchor)

    return loss


class Fcs(Unlearner):
    """Alternate uniform-output and contrastive passes on D_f, then fine-tune on the sub-retain set."""

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("fcs", "Forget-contrast output shaping")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Epochs of the shaping passes, fine-tune epochs, rate and contrastive weight."""
        return {"epochs": SHORT_FINETUNE_EPOCHS, "finetune_epochs": SHORT_FINETUNE_EPOCHS, "lr": FINETUNE_LR, "contrastive_weight": 1.0}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Shape, contrast, fine-tune."""
        arch, lr = ctx.original.arch, float(hp["lr"])
        forget, retain = forget_set(ctx), sub_retain_set(ctx)
        params = ctx.original.params.detach().clone()

        def uniform(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
            return uniform_kl(forward(arch, params, x))

        for epoch in range(int(hp["epochs"])):
            params = train_custom(params, forget, uniform, ctx, epochs=1, lr=lr, stream=f"fcs-uniform-{epoch}")
            if len(retain):
                contrast = contrastive_loss(
                    arch,
                    retain.inputs,
                    ctx.train_config.batch_size,
                    float(hp["contrastive_weight"]),
                    method_seed(ctx, self.method_id, epoch),
                )
                params = train_custom(params, forget, contrast, ctx, epochs=1, lr=lr, stream=f"fcs-contrast-{epoch}")
        model = finetune_sub_retain(
            ctx, ctx.original.with_params(params), epochs=int(hp["finetune_epochs"]), lr=lr, stream=self.method_id
        )
        return RunOutput(model)
