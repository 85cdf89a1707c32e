"""Deterministic SGD training on flat parameter vectors.

All randomness comes from named streams of the config seed: shuffling uses `("shuffle", epoch)` and augmentation
`("augment", epoch)`. The learning rate of an epoch is a function of the epoch index alone, so resuming from a
checkpoint reproduces the uninterrupted trajectory.
"""

import json
import logging as log
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from opentelemetry import trace

import mubench

from ..config import DatasetSplit, LrSchedule
from ..domain import (
    ArchSpec,
    Checkpoint,
    EmptyDatasetError,
    LabeledDataset,
    ModelState,
    ShapeMismatchError,
    TrainConfig,
    TrainingDivergedError,
)
from ..support.seeding import torch_generator
from .augment import random_crop_flip
from .checkpoint import save_checkpoint
from .inference import evaluate
from .networks import check_inputs, forward, init_params

tracer = trace.get_tracer(__name__, mubench.__version_str__)

Batch = tuple[torch.Tensor, torch.Tensor, torch.Tensor]
"""(dataset indices, inputs, labels)"""
LossFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]
"""(params, inputs, labels, indices) -> scalar loss"""
StepHook = Callable[[int, int, torch.Tensor, torch.Tensor, torch.Tensor], None]
"""(epoch, batch number, indices, params before, params after)"""


def epoch_lr(base_lr: float, epoch: int, epochs: int, schedule: LrSchedule) -> float:
    """Learning rate used during `epoch` (0-based)."""
    if schedule == LrSchedule.COSINE and epochs > 0:
        return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / epochs))
    return base_lr


def dataset_batches(
    dataset: LabeledDataset,
    batch_size: int,
    seed: int,
    *,
    shuffle: bool = True,
    augment: bool = False,
    stream: str = "train",
) -> Callable[[int], Iterator[Batch]]:
    """Batch factory: `batches(epoch)` yields the epoch's mini-batches in a seed-determined order."""

    def batches(epoch: int) -> Iterator[Batch]:
        n = len(dataset)
        order = torch.randperm(n, generator=torch_generator(seed, stream, "shuffle", epoch)) if shuffle else torch.arange(n)
        aug_generator = torch_generator(seed, stream, "augment", epoch) if augment else None
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = dataset.inputs[idx]
            if aug_generator is not None:
                x = random_crop_flip(x, aug_generator)
            yield idx, x, dataset.labels[idx]

    return batches


@dataclass
class OptimiseOutcome:
    """Final parameters and the momentum buffer (for checkpointing)."""

    params: torch.Tensor
    momentum_buffer: torch.Tensor


def optimise(
    params: torch.Tensor,
    batches: Callable[[int], Iterator[Batch]],
    loss_fn: LossFn,
    *,
    epochs: int,
    lr: float,
    momentum: float = 0.9,
    nesterov: bool = False,
    weight_decay: float = 0.0,
    schedule: LrSchedule = LrSchedule.CONSTANT,
    grad_mask: Optional[torch.Tensor] = None,
    grad_transform: Optional[Callable[[torch.Tensor], torch.Tensor]] = None,
    start_epoch: int = 0,
    momentum_buffer: Optional[torch.Tensor] = None,
    on_step: Optional[StepHook] = None,
    on_epoch_end: Optional[Callable[[int, torch.Tensor, torch.Tensor], None]] = None,
) -> OptimiseOutcome:
    """Run SGD over `batches(epoch)` for epochs [start_epoch, epochs).

    Entries where `grad_mask` is zero are held fixed exactly (weight decay included).
    `grad_transform` maps the raw gradient to the one the optimiser sees (e.g. a subspace projection).
    """
    p = torch.nn.Parameter(params.detach().clone())
    optimizer = torch.optim.SGD([p], lr=lr, momentum=momentum, nesterov=nesterov, weight_decay=weight_decay)
    if momentum_buffer is not None and momentum_buffer.numel():
        optimizer.state[p]["momentum_buffer"] = momentum_buffer.detach().clone().to(p.dtype)
    keep = grad_mask == 0 if grad_mask is not None else None

    for epoch in range(start_epoch, epochs):
        for group in optimizer.param_groups:
            group["lr"] = epoch_lr(lr, epoch, epochs, schedule)
        for step, (idx, x, y) in enumerate(batches(epoch)):
            optimizer.zero_grad(set_to_none=True)
            loss = loss_fn(p, x, y, idx)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss.item()} at epoch {epoch} batch {step}")
            loss.backward()
            if grad_transform is not None:
                p.grad = grad_transform(p.grad)
            before = p.detach().clone() if (on_step is not None or keep is not None) else None
            optimizer.step()
            if keep is not None:
                with torch.no_grad():
                    p[keep] = before[keep]
            if on_step is not None:
                on_step(epoch, step, idx, before, p.detach())
        if on_epoch_end is not None:
            on_epoch_end(epoch, p.detach(), _momentum(optimizer, p))
    return OptimiseOutcome(p.detach().clone(), _momentum(optimizer, p))


def _momentum(optimizer: torch.optim.SGD, p: torch.nn.Parameter) -> torch.Tensor:
    buf = optimizer.state.get(p, {}).get("momentum_buffer")
    return buf.detach().clone() if buf is not None else torch.zeros(0, dtype=p.dtype)


def cross_entropy_loss(arch: ArchSpec) -> LossFn:
    """Mean cross-entropy for an architecture."""

    def loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        return F.cross_entropy(forward(arch, params, x), y)

    return loss


class UpdateRecorder:
    """Writes per-batch parameter updates for batches that touch a watch set.

    Layout of `directory`: `updates.bin` (float32 little-endian updates back to back) and `index.json`
    (`watch` indices plus one entry per recorded batch with its epoch, step and sample indices).
    A watch set of None records every batch.
    """

    BIN = "updates.bin"
    INDEX = "index.json"

    def __init__(self, directory: Path, watch: Optional[np.ndarray] = None) -> None:
        """Start an empty log."""
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.watch = None if watch is None else np.asarray(watch, dtype=np.int64)
        self._watch_set = None if watch is None else set(self.watch.tolist())
        self.entries: list[dict] = []
        (self.directory / self.BIN).write_bytes(b"")

    def __call__(self, epoch: int, step: int, idx: torch.Tensor, before: torch.Tensor, after: torch.Tensor) -> None:
        """Step hook for `optimise()`."""
        indices = idx.tolist()
        if self._watch_set is not None and self._watch_set.isdisjoint(indices):
            return
        delta = (after - before).to(torch.float32).numpy().astype("<f4")
        with open(self.directory / self.BIN, "ab") as f:
            f.write(delta.tobytes())
        self.entries.append({"epoch": epoch, "step": step, "indices": indices, "size": int(delta.size)})

    def close(self) -> None:
        """Write the index."""
        with open(self.directory / self.INDEX, "w") as f:
            json.dump({"watch": None if self.watch is None else self.watch.tolist(), "entries": self.entries}, f)
        log.debug("Recorded %d batch updates to '%s'", len(self.entries), self.directory)


@tracer.start_as_current_span(name="train")
def train(
    dataset: LabeledDataset,
    config: TrainConfig,
    init: Optional[ModelState] = None,
    *,
    recorder: Optional[UpdateRecorder] = None,
    checkpoint_dir: Optional[Path] = None,
    checkpoint_every: int = 0,
    resume: Optional[Checkpoint] = None,
) -> ModelState:
    """Train a model on `dataset` (the learning algorithm A).

    Args:
        dataset: Training split.
        config: Optimiser settings; `config.arch` fixes the network.
        init: Starting weights; defaults to fresh weights from `config.seed`.
        recorder: Optional per-batch update log (Amnesiac).
        checkpoint_dir: Where to write `epoch-<k>.ckpt` files.
        checkpoint_every: Checkpoint period in epochs (0 disables).
        resume: Continue from this checkpoint instead of `init`.
    """
    if dataset.split != DatasetSplit.TRAIN:
        raise ValueError(f"train() needs a train split, got '{dataset.split.value}'")
    if len(dataset) == 0:
        raise EmptyDatasetError("empty dataset")
    check_inputs(config.arch, dataset.inputs)
    if init is not None and init.arch != config.arch:
        raise ShapeMismatchError("init model architecture does not match the train config")
    if dataset.num_classes != config.arch.num_classes:
        raise ShapeMismatchError(f"dataset has {dataset.num_classes} classes, arch has {config.arch.num_classes}")

    start_epoch, buffer = 0, None
    params = init.params if init is not None else init_params(config.arch, config.seed)
    if resume is not None:
        params, start_epoch, buffer = resume.model.params, resume.epoch, resume.optimizer_state

    template = ModelState(config.arch, params.detach().clone(), config.seed, dataset.fingerprint(), config.epochs)

    def on_epoch_end(epoch: int, current: torch.Tensor, momentum_buffer: torch.Tensor) -> None:
        if checkpoint_dir is None or checkpoint_every <= 0 or (epoch + 1) % checkpoint_every:
            return
        state = Checkpoint(template.with_params(current, epochs=epoch + 1), momentum_buffer, epoch + 1, torch.get_rng_state().numpy().tobytes())
        save_checkpoint(state, Path(checkpoint_dir) / f"epoch-{epoch + 1}.ckpt")

    log.info("Training %s on '%s' (%d samples, %d epochs, seed %d)", config.arch.kind.value, dataset.name, len(dataset), config.epochs, config.seed)
    outcome = optimise(
        params,
        dataset_batches(dataset, config.batch_size, config.seed, augment=config.augmentation),
        cross_entropy_loss(config.arch),
        epochs=config.epochs,
        lr=config.lr,
        momentum=config.momentum,
        nesterov=config.nesterov,
        weight_decay=config.weight_decay,
        schedule=config.schedule,
        start_epoch=start_epoch,
        momentum_buffer=buffer,
        on_step=recorder,
        on_epoch_end=on_epoch_end,
    )
    if recorder is not None:
        recorder.close()
    model = template.with_params(outcome.params)
    accuracy = evaluate(model, dataset)
    log.info("Finished training on '%s': train accuracy %.2f", dataset.name, accuracy)
    return model.with_params(model.params, train_accuracy=accuracy)


def fine_tune(
    model: ModelState,
    dataset: LabeledDataset,
    *,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    stream: str,
    extra_loss: Optional[Callable[[torch.Tensor], torch.Tensor]] = None,
    grad_mask: Optional[torch.Tensor] = None,
    augment: bool = False,
    momentum: float = 0.9,
) -> ModelState:
    """Cross-entropy fine-tuning from `model` at a constant learning rate. Zero epochs returns the model unchanged."""
    if epochs <= 0 or len(dataset) == 0:
        return model
    check_inputs(model.arch, dataset.inputs)
    arch = model.arch

    def loss(params: torch.Tensor, x: torch.Tensor, y: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        value = F.cross_entropy(forward(arch, params, x), y)
        return value + extra_loss(params) if extra_loss is not None else value

    outcome = optimise(
        model.params,
        dataset_batches(dataset, batch_size, seed, augment=augment, stream=stream),
        loss,
        epochs=epochs,
        lr=lr,
        momentum=momentum,
        grad_mask=grad_mask,
    )
    return model.with_params(outcome.params)
