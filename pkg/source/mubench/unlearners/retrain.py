"""Retrain from scratch on the retain set: the gold standard reference."""

import dataclasses
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

from ..domain import EmptyDatasetError, UnlearnContext
from ..substrate.training import train
from ..support.seeding import derive_seed
from .base import RunOutput, Unlearner


class Retrain(Unlearner):
    """train(D_r) with the original config and a fresh seed."""

    exact = True

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("retrain", "Retrain from scratch on the retain set")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Retrain has no knobs beyond the training config."""
        return {}

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Any) -> RunOutput:
        """Train a fresh model on D_r."""
        if len(ctx.plan.retain_indices) == 0:
            raise EmptyDatasetError("empty dataset: the retain set is empty")
        retain = ctx.dataset.subset(ctx.plan.retain_indices, name=f"{ctx.dataset.name}:retain")
        config = dataclasses.replace(ctx.train_config, seed=derive_seed(ctx.train_config.seed, "retrain"))
        return RunOutput(train(retain, config))
