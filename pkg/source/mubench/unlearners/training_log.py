"""Methods that rely on artifacts of the original training run: Unrolling (θ_0) and Amnesiac (per-batch updates)."""

import json
import logging as log
from pathlib import Path
from typing import Any, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch

from ..constants import AMNESIAC_FINETUNE_EPOCHS, FINETUNE_LR, UNROLLING_FINETUNE_EPOCHS
from ..domain import LabeledDataset, MissingTrainingLogError, ModelState, TrainConfig, TrainingLog, UnlearnContext
from ..substrate.autodiff import loss_gradient
from ..substrate.networks import init_model
from ..substrate.training import UpdateRecorder, train
from .base import RunOutput, Unlearner, finetune_sub_retain


def unrolling_add_back(
    final: ModelState, initial: ModelState, dataset: LabeledDataset, forget: np.ndarray, lr: float
) -> ModelState:
    """θ_T + lr·Σ_{z∈D_f} ∇ℓ(z; θ_0)."""
    if initial.arch != final.arch:
        raise MissingTrainingLogError("θ_0 does not match the architecture of the trained model")
    if len(forget) == 0:
        return final.with_params(final.params)
    return final.with_params(final.params + lr * loss_gradient(initial, dataset, forget))


class Unrolling(Unlearner):
    """Add back the forget-set gradients taken at the initial weights, then fine-tune."""

    requires_training_log = True

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("unrolling", "Add back forget gradients at θ_0, then fine-tune")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """`unroll_lr` of None uses the training learning rate."""
        return {"unroll_lr": None, "finetune_epochs": UNROLLING_FINETUNE_EPOCHS, "finetune_lr": FINETUNE_LR}

    def prepare(self: Self, ctx: UnlearnContext, hp: dict[str, Any]) -> ModelState:
        """Fetch θ_0 from the training log."""
        if ctx.training_log is None or ctx.training_log.initial is None:
            raise MissingTrainingLogError("unrolling needs the initial weights θ_0 of the original training run")
        return ctx.training_log.initial

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: ModelState) -> RunOutput:
        """Add back, then fine-tune on the sub-retain set."""
        lr = ctx.train_config.lr if hp["unroll_lr"] is None else float(hp["unroll_lr"])
        model = unrolling_add_back(ctx.original, prepared, ctx.dataset, ctx.plan.forget_indices, lr)
        model = finetune_sub_retain(
            ctx, model, epochs=int(hp["finetune_epochs"]), lr=float(hp["finetune_lr"]), stream="unrolling"
        )
        return RunOutput(model)


def amnesiac_record(
    dataset: LabeledDataset,
    config: TrainConfig,
    directory: Path,
    watch: Optional[np.ndarray] = None,
    init: Optional[ModelState] = None,
) -> tuple[ModelState, TrainingLog]:
    """Train while logging the update of every batch that contains a watched sample (all batches when None).

    Recording does not alter the trajectory: the returned model equals an unrecorded `train()` with the same inputs.
    """
    initial = init if init is not None else init_model(config.arch, config.seed)
    recorder = UpdateRecorder(Path(directory), watch)
    model = train(dataset, config, initial, recorder=recorder)
    return model, TrainingLog(initial=initial, updates_dir=Path(directory))


def read_update_log(directory: Path, param_count: int) -> tuple[Optional[np.ndarray], list[dict], np.memmap]:
    """(watch set, entries, memory-mapped float32 updates) of a log written by `UpdateRecorder`."""
    directory = Path(directory)
    index_file, bin_file = directory / UpdateRecorder.INDEX, directory / UpdateRecorder.BIN
    if not index_file.exists() or not bin_file.exists():
        raise MissingTrainingLogError(f"no update log in '{directory}'")
    with open(index_file) as f:
        index = json.load(f)
    entries = index["entries"]
    expected = sum(int(e["size"]) for e in entries)
    if any(int(e["size"]) != param_count for e in entries) or bin_file.stat().st_size != 4 * expected:
        raise MissingTrainingLogError(f"update log in '{directory}' is inconsistent with a {param_count}-parameter model")
    updates = np.memmap(bin_file, dtype="<f4", mode="r") if expected else np.zeros(0, dtype="<f4")
    watch = None if index["watch"] is None else np.asarray(index["watch"], dtype=np.int64)
    return watch, entries, updates  # type: ignore[return-value]


def amnesiac_remove(model: ModelState, updates_dir: Path, forget: np.ndarray) -> tuple[ModelState, int]:
    """θ_T − Σ Δθ over the logged batches that contain a forget sample. Returns the model and the batch count."""
    n = model.arch.param_count()
    watch, entries, updates = read_update_log(updates_dir, n)
    forget_set = set(np.asarray(forget, dtype=np.int64).tolist())
    if watch is not None and not forget_set <= set(watch.tolist()):
        raise MissingTrainingLogError("the update log did not watch every forget sample")
    total = np.zeros(n, dtype=np.float64)
    removed = 0
    for k, entry in enumerate(entries):
        if forget_set.isdisjoint(entry["indices"]):
            continue
        total += updates[k * n : (k + 1) * n]
        removed += 1
    if removed == 0:
        return model.with_params(model.params), 0
    params = (model.params.to(torch.float64) - torch.from_numpy(total)).to(model.params.dtype)
    return model.with_params(params), removed


class Amnesiac(Unlearner):
    """Subtract the logged updates of every batch that held forget data, then fine-tune."""

    requires_training_log = True

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("amnesiac", "Remove logged forget-batch updates, then fine-tune")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Fine-tune settings."""
        return {"finetune_epochs": AMNESIAC_FINETUNE_EPOCHS, "finetune_lr": FINETUNE_LR}

    def prepare(self: Self, ctx: UnlearnContext, hp: dict[str, Any]) -> Path:
        """Locate the update log, replaying the original training with recording on when none was kept."""
        if ctx.training_log is None:
            raise MissingTrainingLogError("amnesiac needs the training log of the original run")
        if ctx.training_log.updates_dir is not None:
            return ctx.training_log.updates_dir
        directory = ctx.artifact_store / "amnesiac-log"
        replayed, _ = amnesiac_record(
            ctx.dataset, ctx.train_config, directory, ctx.plan.forget_indices, ctx.training_log.initial
        )
        if not torch.equal(replayed.params, ctx.original.params):
            log.warning("Amnesiac replay diverged from the original model; removal still applies to the original model")
        return directory

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: Path) -> RunOutput:
        """Remove the forget-batch updates and fine-tune on the sub-retain set."""
        model, removed = amnesiac_remove(ctx.original, prepared, ctx.plan.forget_indices)
        model = finetune_sub_retain(
            ctx, model, epochs=int(hp["finetune_epochs"]), lr=float(hp["finetune_lr"]), stream="amnesiac"
        )
        return RunOutput(model, {"removed_batches": removed})
