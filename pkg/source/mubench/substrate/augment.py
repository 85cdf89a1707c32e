"""Training-time augmentation: random crop with zero padding and horizontal flip, driven by an explicit generator."""

import torch
import torch.nn.functional as F  # noqa: N812

from ..constants import AUGMENT_CROP_PADDING


def random_crop_flip(inputs: torch.Tensor, generator: torch.Generator, padding: int = AUGMENT_CROP_PADDING) -> torch.Tensor:
    """Augmented copy of a (N, C, H, W) batch."""
    n, _, height, width = inputs.shape
    padded = F.pad(inputs, (padding, padding, padding, padding))
    offsets = torch.randint(0, 2 * padding + 1, (n, 2), generator=generator)
    flips = torch.rand(n, generator=generator) < 0.5
    out = torch.empty_like(inputs)
    for i in range(n):
        dy, dx = int(offsets[i, 0]), int(offsets[i, 1])
        crop = padded[i, :, dy : dy + height, dx : dx + width]
        out[i] = crop.flip(-1) if flips[i] else crop
    return out
