"""Named sub-seeds. Every random stream (init, shuffling, augmentation, noise, sampling) derives from one experiment seed."""

import hashlib

import numpy as np
import torch

_SEED_MODULUS = 2**31 - 1


def derive_seed(seed: int, *names: object) -> int:
    """Deterministic sub-seed for a named stream, e.g. `derive_seed(7, "shuffle", 3)`."""
    text = ":".join([str(seed), *[str(n) for n in names]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") % _SEED_MODULUS


def torch_generator(seed: int, *names: object) -> torch.Generator:
    """CPU torch generator seeded from a named stream."""
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *names))
    return generator


def numpy_rng(seed: int, *names: object) -> np.random.Generator:
    """numpy generator seeded from a named stream."""
    return np.random.default_rng(derive_seed(seed, *names))


def enable_determinism() -> None:
    """Platform flags that make training a pure function of its inputs."""
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.benchmark = False
