"""SISA: sharded, isolated, sliced, aggregated training and exact unlearning.

The training set is split at random into k disjoint shards and each shard into s slices. Shard models learn slice
by slice, each stage on the union of the slices seen so far, and are checkpointed after every stage. Unlearning
retrains only the shards that hold forgotten samples, resuming from the checkpoint just before the earliest slice
that changed. Predictions are a majority vote over the shard models.
"""

import dataclasses
import logging as log
import time
from pathlib import Path
from typing import Any

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch
from opentelemetry import trace

import mubench

from ..constants import SISA_SHARDS, SISA_SLICES
from ..domain import (
    EmptyDatasetError,
    LabeledDataset,
    ModelState,
    ScenarioPlan,
    SisaEnsemble,
    TrainConfig,
    UnlearnContext,
    UnlearnResult,
)
from ..substrate.checkpoint import load_model, save_model
from ..substrate.inference import predict_labels
from ..substrate.networks import init_model
from ..substrate.training import train
from ..support.seeding import derive_seed, numpy_rng
from .base import RunOutput, Unlearner

tracer = trace.get_tracer(__name__, mubench.__version_str__)


def _stage_epochs(epochs: int, slices: int) -> list[int]:
    """Epoch budget of each slice stage; the stages add up to the full training epochs."""
    return [len(part) for part in np.array_split(np.arange(epochs), slices)]


def _checkpoint_path(directory: Path, shard: int, stage: int) -> Path:
    return directory / f"shard-{shard}-slice-{stage}.ckpt"


def _bounds(sizes: list[int]) -> tuple[int, ...]:
    return tuple(int(b) for b in np.cumsum(sizes))


def _train_shard(
    dataset: LabeledDataset,
    indices: np.ndarray,
    bounds: tuple[int, ...],
    config: TrainConfig,
    shard: int,
    seed: int,
    directory: Path,
    start_stage: int = 0,
    start_model: ModelState | None = None,
) -> ModelState:
    """Train slice stages [start_stage, s) of one shard, checkpointing after each."""
    model = start_model if start_model is not None else init_model(config.arch, derive_seed(seed, "sisa", shard))
    if start_stage == 0:
        save_model(model, _checkpoint_path(directory, shard, 0))
    stage_epochs = _stage_epochs(config.epochs, len(bounds))
    for stage in range(start_stage, len(bounds)):
        seen = indices[: bounds[stage]]
        if len(seen) and stage_epochs[stage]:
            stage_config = dataclasses.replace(
                config, epochs=stage_epochs[stage], seed=derive_seed(seed, "sisa", shard, stage)
            )
            model = train(dataset.subset(seen, name=f"{dataset.name}:shard{shard}:slice{stage + 1}"), stage_config, init=model)
        save_model(model, _checkpoint_path(directory, shard, stage + 1))
    return model


@tracer.start_as_current_span(name="sisa_train")
def sisa_train(
    dataset: LabeledDataset,
    shards: int,
    slices: int,
    config: TrainConfig,
    checkpoint_dir: Path,
    seed: int = 0,
) -> SisaEnsemble:
    """Train a SISA ensemble.

    Args:
        dataset: Training split.
        shards: Number of disjoint shards k.
        slices: Number of slices s per shard.
        config: Training config of every shard model; its epochs are spread over the slice stages.
        checkpoint_dir: Where the per-stage checkpoints go.
        seed: Seed of the shard partition and the shard models.
    """
    if shards < 1 or slices < 1:
        raise ValueError(f"SISA needs shards >= 1 and slices >= 1, got {shards} and {slices}")
    if len(dataset) < shards * slices:
        raise EmptyDatasetError(f"{len(dataset)} samples cannot fill {shards} shards of {slices} slices")
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    order = numpy_rng(seed, "sisa", "partition").permutation(len(dataset)).astype(np.int64)
    shard_indices, slice_bounds, models = [], [], []
    for shard, indices in enumerate(np.array_split(order, shards)):
        bounds = _bounds([len(part) for part in np.array_split(indices, slices)])
        log.info("SISA shard %d/%d: %d samples in %d slices", shard + 1, shards, len(indices), slices)
        models.append(_train_shard(dataset, indices, bounds, config, shard, seed, checkpoint_dir))
        shard_indices.append(indices)
        slice_bounds.append(bounds)
    return SisaEnsemble(tuple(models), tuple(shard_indices), tuple(slice_bounds), checkpoint_dir, config, seed)


def _retrain_shards(
    ensemble: SisaEnsemble, dataset: LabeledDataset, forget: np.ndarray
) -> tuple[SisaEnsemble, list[int]]:
    """New ensemble without the forgotten samples, plus the ids of the retrained shards."""
    forget_set = set(np.asarray(forget, dtype=np.int64).tolist())
    known = set(np.concatenate(ensemble.shard_indices).tolist())
    missing = sorted(forget_set - known)
    if missing:
        raise ValueError(f"forget indices {missing[:10]} are not in the SISA shard map")

    models = list(ensemble.shard_models)
    shard_indices = list(ensemble.shard_indices)
    slice_bounds = list(ensemble.slice_bounds)
    retrained = []
    for shard, (indices, bounds) in enumerate(zip(ensemble.shard_indices, ensemble.slice_bounds)):
        hit = np.flatnonzero(np.isin(indices, list(forget_set)))
        if len(hit) == 0:
            continue
        # stage of the earliest forgotten sample in slice order
        first_stage = int(np.searchsorted(np.asarray(bounds), hit[0], side="right"))
        keep = ~np.isin(indices, list(forget_set))
        starts = (0,) + bounds[:-1]
        sizes = [int(keep[a:b].sum()) for a, b in zip(starts, bounds)]
        new_indices, new_bounds = indices[keep], _bounds(sizes)
        start_model = load_model(_checkpoint_path(ensemble.checkpoint_dir, shard, first_stage))
        log.info("SISA retraining shard %d from slice stage %d (%d samples removed)", shard, first_stage, len(hit))
        models[shard] = _train_shard(
            dataset,
            new_indices,
            new_bounds,
            ensemble.config,
            shard,
            ensemble.seed,
            ensemble.checkpoint_dir,
            start_stage=first_stage,
            start_model=start_model,
        )
        shard_indices[shard], slice_bounds[shard] = new_indices, new_bounds
        retrained.append(shard)
    empty = [s for s, idx in enumerate(shard_indices) if len(idx) == 0]
    if empty:
        log.warning("SISA shards %s lost every sample and are dropped from the vote", empty)
        if len(empty) == len(shard_indices):
            raise EmptyDatasetError("empty dataset: every SISA shard is empty")
    keep_shards = [s for s in range(len(shard_indices)) if s not in empty]
    new = SisaEnsemble(
        tuple(models[s] for s in keep_shards),
        tuple(shard_indices[s] for s in keep_shards),
        tuple(slice_bounds[s] for s in keep_shards),
        ensemble.checkpoint_dir,
        ensemble.config,
        ensemble.seed,
    )
    return new, retrained


def sisa_unlearn(ensemble: SisaEnsemble, plan: ScenarioPlan, dataset: LabeledDataset) -> UnlearnResult:
    """Retrain the shards that hold `plan.forget_indices`. Untouched shard models are returned as they are."""
    start = time.perf_counter()
    new, retrained = _retrain_shards(ensemble, dataset, plan.forget_indices)
    return UnlearnResult(
        model=new,
        wall_seconds=time.perf_counter() - start,
        aux_storage_bytes=0,
        method_id="sisa",
        diagnostics={"retrained_shards": retrained},
    )


def sisa_predict(ensemble: SisaEnsemble, input_: torch.Tensor) -> int:
    """Majority vote over shard argmaxes for one (C, H, W) input. Ties go to the lowest class index."""
    return int(predict_labels(ensemble, input_.unsqueeze(0))[0])


class Sisa(Unlearner):
    """SISA as a matrix method: shard training in `prepare()`, shard retraining in `run()`."""

    exact = True

    def __init__(self: Self) -> None:
        """Initialize."""
        super().__init__("sisa", "Sharded, isolated, sliced and aggregated training with shard retraining")

    @property
    def defaults(self: Self) -> dict[str, Any]:
        """Shards and slices."""
        return {"shards": SISA_SHARDS, "slices": SISA_SLICES}

    def prepare(self: Self, ctx: UnlearnContext, hp: dict[str, Any]) -> SisaEnsemble:
        """Train the shard models on the full training set."""
        seed = derive_seed(ctx.train_config.seed, "sisa")
        return sisa_train(ctx.dataset, int(hp["shards"]), int(hp["slices"]), ctx.train_config, ctx.artifact_store / "sisa", seed)

    def run(self: Self, ctx: UnlearnContext, hp: dict[str, Any], prepared: SisaEnsemble) -> RunOutput:
        """Retrain the affected shards."""
        new, retrained = _retrain_shards(prepared, ctx.dataset, ctx.plan.forget_indices)
        return RunOutput(new, {"retrained_shards": retrained, "shards": len(new.shard_models)})
