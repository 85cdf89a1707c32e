"""Domain classes for MUBench.

These classes describe datasets, models, scenarios and results as values. They are not coupled to how the
harness persists them, though the JSON shapes produced by `to_dict()` are the ones written to disk.
"""
import hashlib
import json
import logging as log
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
import torch
from pydantic.dataclasses import dataclass as pydantic_dataclass

from .config import ArchKind, DatasetSplit, LrSchedule, MiaFeatureKind, PoisonKind, RunStatus, ScenarioKind, TriggerLocation
from .constants import (
    BACKDOOR_TARGET_CLASS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CNN_WIDTHS,
    DEFAULT_EPOCHS,
    DEFAULT_HIDDEN_UNITS,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_WEIGHT_DECAY,
    LABEL_FLIP_PAIRS,
    TRIGGER_SIZE,
    TRIGGER_VALUE,
)


class EmptyDatasetError(ValueError):
    """An operation needs at least one sample."""


class ShapeMismatchError(ValueError):
    """Inputs do not fit the architecture."""


class BudgetError(ValueError):
    """A forgetting or poisoning budget exceeds the available population."""


class UnknownMethodError(ValueError):
    """A method id is not in the registry."""


class IncompatiblePlanError(ValueError):
    """A method cannot run on the given scenario plan."""


class MissingTrainingLogError(ValueError):
    """A method needs artifacts recorded during the original training."""


class MissingReferenceError(ValueError):
    """A metric needs the retrain reference and none was given."""


class TrainingDivergedError(RuntimeError):
    """The loss became NaN or blew past a divergence guard."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, truncated or from another format version."""


def _sha256(*chunks: bytes) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor. The layer list is derived analytically so a flat parameter vector can be validated without building a network."""

    kind: ArchKind
    input_shape: tuple[int, int, int]
    num_classes: int
    widths: tuple[int, ...] = DEFAULT_CNN_WIDTHS
    """Conv channel widths (CNN only). Each block halves the spatial size."""
    hidden: int = DEFAULT_HIDDEN_UNITS
    """Units of the hidden dense layer (MLP and CNN)."""

    def __post_init__(self: Self) -> None:
        """Validate the descriptor."""
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.kind == ArchKind.CNN:
            scale = 2 ** len(self.widths)
            if self.input_shape[1] < scale or self.input_shape[2] < scale:
                raise ValueError(f"CNN with {len(self.widths)} blocks needs inputs of at least {scale}x{scale}")

    @property
    def input_dim(self: Self) -> int:
        """Number of input features once flattened."""
        return math.prod(self.input_shape)

    def layers(self: Self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter names and shapes in registration order."""
        channels, height, width = self.input_shape
        out: list[tuple[str, tuple[int, ...]]] = []
        if self.kind == ArchKind.CNN:
            for i, w in enumerate(self.widths, start=1):
                out += [(f"conv{i}.weight", (w, channels, 3, 3)), (f"conv{i}.bias", (w,))]
                channels, height, width = w, height // 2, width // 2
            flat = channels * height * width
        else:
            flat = self.input_dim
        if self.kind in (ArchKind.MLP, ArchKind.CNN):
            out += [("hidden.weight", (self.hidden, flat)), ("hidden.bias", (self.hidden,))]
            flat = self.hidden
        out += [("head.weight", (self.num_classes, flat)), ("head.bias", (self.num_classes,))]
        return out

    def param_count(self: Self) -> int:
        """Total number of parameters."""
        return sum(math.prod(shape) for _, shape in self.layers())

    def with_classes(self: Self, num_classes: int) -> "ArchSpec":
        """Same network with a different output arity."""
        return ArchSpec(self.kind, self.input_shape, num_classes, self.widths, self.hidden)

    def to_dict(self: Self) -> dict:
        """JSON friendly representation."""
        return {
            "kind": self.kind.value,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "widths": list(self.widths),
            "hidden": self.hidden,
        }

    @staticmethod
    def from_dict(data: dict) -> "ArchSpec":
        """Inverse of `to_dict()`."""
        return ArchSpec(
            kind=ArchKind(data["kind"]),
            input_shape=tuple(data["input_shape"]),
            num_classes=int(data["num_classes"]),
            widths=tuple(data.get("widths", DEFAULT_CNN_WIDTHS)),
            hidden=int(data.get("hidden", DEFAULT_HIDDEN_UNITS)),
        )


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Indexed collection of (input tensor, class label). Index i always names the same sample.

    Tensors are never modified in place; derived datasets are new objects.
    """

    name: str
    inputs: torch.Tensor
    """float32 tensor of shape (N, C, H, W) with values in [0, 1]."""
    labels: torch.Tensor
    """int64 tensor of shape (N,)."""
    num_classes: int
    split: DatasetSplit

    def __post_init__(self: Self) -> None:
        """Validate invariants."""
        if self.inputs.dim() != 4:
            raise ShapeMismatchError(f"inputs must be (N, C, H, W), got {tuple(self.inputs.shape)}")
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (int(self.labels.min()) < 0 or int(self.labels.max()) >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self: Self) -> int:
        """Number of samples."""
        return len(self.labels)

    @property
    def input_shape(self: Self) -> tuple[int, int, int]:
        """Shape of a single input."""
        return tuple(self.inputs.shape[1:])  # type: ignore[return-value]

    def class_indices(self: Self, class_id: int) -> np.ndarray:
        """Sorted indices of every sample labelled `class_id`."""
        return np.flatnonzero(self.labels.numpy() == class_id)

    def class_counts(self: Self) -> np.ndarray:
        """Population of each class."""
        return np.bincount(self.labels.numpy(), minlength=self.num_classes)

    def subset(self: Self, indices: np.ndarray | list[int], name: Optional[str] = None) -> "LabeledDataset":
        """New dataset holding the given indices, in the given order."""
        idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
        return LabeledDataset(
            name=name or f"{self.name}[{len(idx)}]",
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            split=self.split,
        )

    def replace(
        self: Self, inputs: Optional[torch.Tensor] = None, labels: Optional[torch.Tensor] = None, name: Optional[str] = None
    ) -> "LabeledDataset":
        """Copy with some fields swapped out."""
        return LabeledDataset(
            name=name or self.name,
            inputs=self.inputs if inputs is None else inputs,
            labels=self.labels if labels is None else labels,
            num_classes=self.num_classes,
            split=self.split,
        )

    def fingerprint(self: Self) -> str:
        """Content digest of inputs and labels."""
        return _sha256(
            self.inputs.contiguous().numpy().tobytes(), self.labels.contiguous().numpy().tobytes(), self.split.value.encode()
        )[:16]


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings. SGD with (optionally Nesterov) momentum."""

    arch: ArchSpec
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    momentum: float = DEFAULT_MOMENTUM
    nesterov: bool = True
    schedule: LrSchedule = LrSchedule.COSINE
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    augmentation: bool = False
    seed: int = 0

    def __post_init__(self: Self) -> None:
        """Validate invariants."""
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.nesterov and self.momentum == 0:
            raise ValueError("nesterov requires momentum > 0")

    def to_dict(self: Self) -> dict:
        """JSON friendly representation."""
        return {
            "arch": self.arch.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "nesterov": self.nesterov,
            "schedule": self.schedule.value,
            "weight_decay": self.weight_decay,
            "augmentation": self.augmentation,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class ModelState:
    """Architecture descriptor plus flat parameter vector. The unit every unlearner transforms."""

    arch: ArchSpec
    params: torch.Tensor
    """1-D float tensor laid out in `arch.layers()` order."""
    seed: int
    trained_on: str
    """Fingerprint of the dataset the parameters were fitted to."""
    epochs: int
    train_accuracy: Optional[float] = None

    def __post_init__(self: Self) -> None:
        """Validate the parameter count."""
        if self.params.dim() != 1 or self.params.numel() != self.arch.param_count():
            raise ShapeMismatchError(
                f"params has {self.params.numel()} entries but {self.arch.kind.value} declares {self.arch.param_count()}"
            )

    def with_params(self: Self, params: torch.Tensor, **changes: Any) -> "ModelState":
        """Copy with new parameters (and optionally other fields)."""
        fields_ = {
            "arch": self.arch,
            "seed": self.seed,
            "trained_on": self.trained_on,
            "epochs": self.epochs,
            "train_accuracy": self.train_accuracy,
        }
        fields_.update(changes)
        return ModelState(params=params.detach().clone(), **fields_)

    def tensors(self: Self) -> dict[str, torch.Tensor]:
        """Named views into the flat parameter vector."""
        out, offset = {}, 0
        for name, shape in self.arch.layers():
            size = math.prod(shape)
            out[name] = self.params[offset : offset + size].view(shape)
            offset += size
        return out

    @staticmethod
    def from_tensors(arch: ArchSpec, tensors: dict[str, torch.Tensor], **fields_: Any) -> "ModelState":
        """Flatten named tensors in the layer order of `arch`."""
        flat = torch.cat([tensors[name].reshape(-1) for name, _ in arch.layers()])
        return ModelState(arch=arch, params=flat.detach().clone(), **fields_)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """A resumable training snapshot."""

    model: ModelState
    optimizer_state: torch.Tensor
    """Flat momentum buffer, empty when the optimiser keeps none."""
    epoch: int
    """Number of completed epochs."""
    rng_state: bytes


@dataclass(frozen=True)
class PoisonSpec:
    """Poisoning attack parameters."""

    kind: PoisonKind
    budget: int
    flip_pairs: tuple[tuple[int, int], ...] = LABEL_FLIP_PAIRS
    trigger_size: int = TRIGGER_SIZE
    trigger_location: TriggerLocation = TriggerLocation.BOTTOM_RIGHT
    trigger_value: float = TRIGGER_VALUE
    target_class: int = BACKDOOR_TARGET_CLASS
    seed: int = 0

    def __post_init__(self: Self) -> None:
        """Validate the parts that do not depend on a dataset."""
        if self.budget < 0:
            raise BudgetError(f"poison budget must be >= 0, got {self.budget}")
        if self.trigger_size < 1:
            raise ValueError(f"trigger_size must be >= 1, got {self.trigger_size}")

    def to_dict(self: Self) -> dict:
        """JSON friendly representation."""
        return {
            "kind": self.kind.value,
            "budget": self.budget,
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "trigger_size": self.trigger_size,
            "trigger_location": self.trigger_location.value,
            "trigger_value": self.trigger_value,
            "target_class": self.target_class,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(data: dict) -> "PoisonSpec":
        """Inverse of `to_dict()`."""
        return PoisonSpec(
            kind=PoisonKind(data["kind"]),
            budget=int(data["budget"]),
            flip_pairs=tuple(tuple(p) for p in data.get("flip_pairs", LABEL_FLIP_PAIRS)),  # type: ignore[misc]
            trigger_size=int(data.get("trigger_size", TRIGGER_SIZE)),
            trigger_location=TriggerLocation(data.get("trigger_location", TriggerLocation.BOTTOM_RIGHT.value)),
            trigger_value=float(data.get("trigger_value", TRIGGER_VALUE)),
            target_class=int(data.get("target_class", BACKDOOR_TARGET_CLASS)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class ScenarioPlan:
    """Partition of the training indices into forget (D_f) and retain (D_r) sets."""

    kind: ScenarioKind
    forget_indices: np.ndarray
    retain_indices: np.ndarray
    num_samples: int
    budget: int
    target_class: Optional[int] = None
    poison: Optional[PoisonSpec] = None
    seed: Optional[int] = None
    degenerate: bool = False
    """True when the retain set is empty."""

    def __post_init__(self: Self) -> None:
        """Check the partition property."""
        forget = np.asarray(self.forget_indices, dtype=np.int64)
        retain = np.asarray(self.retain_indices, dtype=np.int64)
        if len(forget) + len(retain) != self.num_samples:
            raise ValueError("forget and retain sets do not cover the training set")
        if np.any(np.diff(forget) <= 0) or np.any(np.diff(retain) <= 0):
            raise ValueError("index sets must be sorted and free of duplicates")
        if len(np.intersect1d(forget, retain, assume_unique=True)):
            raise ValueError("forget and retain sets overlap")
        object.__setattr__(self, "forget_indices", forget)
        object.__setattr__(self, "retain_indices", retain)

    @property
    def descriptor(self: Self) -> str:
        """Short human readable scenario name, e.g. `one_class:c0`."""
        parts = [self.kind.value]
        if self.target_class is not None:
            parts.append(f"c{self.target_class}")
        if self.poison is not None:
            parts.append(self.poison.kind.value)
        return ":".join(parts)

    def to_dict(self: Self) -> dict:
        """JSON friendly representation."""
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "budget": self.budget,
            "num_samples": self.num_samples,
            "target_class": self.target_class,
            "poison": self.poison.to_dict() if self.poison else None,
            "degenerate": self.degenerate,
            "forget_indices": self.forget_indices.tolist(),
            "retain_indices": self.retain_indices.tolist(),
        }

    def to_json(self: Self) -> str:
        """Serialise so a scenario can be pinned across method comparisons."""
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ScenarioPlan":
        """Inverse of `to_json()`."""
        data = json.loads(text)
        return ScenarioPlan(
            kind=ScenarioKind(data["kind"]),
            forget_indices=np.asarray(data["forget_indices"], dtype=np.int64),
            retain_indices=np.asarray(data["retain_indices"], dtype=np.int64),
            num_samples=int(data["num_samples"]),
            budget=int(data["budget"]),
            target_class=data.get("target_class"),
            poison=PoisonSpec.from_dict(data["poison"]) if data.get("poison") else None,
            seed=data.get("seed"),
            degenerate=bool(data.get("degenerate", False)),
        )

    def fingerprint(self: Self) -> str:
        """Content digest used to key retrain reference caches."""
        return _sha256(self.to_json().encode())[:16]


@dataclass(frozen=True, eq=False)
class TrainingLog:
    """Artifacts recorded while training the original model."""

    initial: Optional[ModelState] = None
    """θ_0, the weights before the first update."""
    updates_dir: Optional[Path] = None
    """Directory of the per-batch update log, see `mubench.substrate.training.UpdateRecorder`."""


@dataclass(frozen=True, eq=False)
class SisaEnsemble:
    """Shard models of a SISA training run plus the bookkeeping needed to unlearn from them."""

    shard_models: tuple[ModelState, ...]
    shard_indices: tuple[np.ndarray, ...]
    """Training indices of each shard, in slice order."""
    slice_bounds: tuple[tuple[int, ...], ...]
    """Per shard, the end offset of each slice inside `shard_indices`."""
    checkpoint_dir: Path
    config: TrainConfig
    seed: int

    @property
    def num_classes(self: Self) -> int:
        """Output arity."""
        return self.shard_models[0].arch.num_classes

    def shard_of(self: Self, index: int) -> int:
        """Shard holding a training index."""
        for shard, indices in enumerate(self.shard_indices):
            if np.any(indices == index):
                return shard
        raise ValueError(f"index {index} is not in the shard map")


@dataclass(frozen=True, eq=False)
class UnlearnContext:
    """Everything an unlearning method may consume."""

    original: ModelState
    dataset: LabeledDataset
    plan: ScenarioPlan
    train_config: TrainConfig
    artifact_store: Path
    method_params: dict = field(default_factory=dict)
    sub_retain_fraction: float = 0.1
    training_log: Optional[TrainingLog] = None
    augment_during_unlearning: bool = False

    def __post_init__(self: Self) -> None:
        """Validate."""
        if not 0 <= self.sub_retain_fraction <= 1:
            raise ValueError(f"sub_retain_fraction must be in [0, 1], got {self.sub_retain_fraction}")
        if self.plan.num_samples != len(self.dataset):
            raise ValueError("plan and dataset disagree on the number of training samples")


@dataclass(frozen=True, eq=False)
class UnlearnResult:
    """Output of one unlearning invocation."""

    model: "ModelState | SisaEnsemble"
    wall_seconds: float
    aux_storage_bytes: int
    method_id: str
    hyperparams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    """Method specific flags, e.g. `cg_converged` or `adversarial_failure_fraction`."""

    def __post_init__(self: Self) -> None:
        """Validate."""
        if self.wall_seconds < 0 or self.aux_storage_bytes < 0:
            raise ValueError("cost accounting must be non-negative")


@dataclass(frozen=True)
class MethodSpec:
    """A method id with its hyperparameters."""

    method_id: str
    hyperparams: dict = field(default_factory=dict)
    requires_training_log: bool = False
    class_wise_only: bool = False


@dataclass(frozen=True, eq=False)
class MiaPredictor:
    """Logistic membership predictor over one feature kind. Score >= 0 means member."""

    kind: MiaFeatureKind
    weights: np.ndarray
    bias: float
    train_meta: dict = field(default_factory=dict)

    def scores(self: Self, features: np.ndarray) -> np.ndarray:
        """Linear decision scores."""
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def is_member(self: Self, features: np.ndarray) -> np.ndarray:
        """Boolean member decision per row."""
        return self.scores(features) >= 0


@pydantic_dataclass
class MetricsReport:
    """One results row for (method, scenario, budget, seed)."""

    method_id: str
    scenario: str
    scenario_kind: str
    budget: int
    seed: int
    status: RunStatus = RunStatus.OK
    target_class: Optional[int] = None
    ta: Optional[float] = None
    ra: Optional[float] = None
    fa_raw: Optional[float] = None
    fa_disc: Optional[float] = None
    mia: dict[str, float] = field(default_factory=dict)
    l2: Optional[float] = None
    rte_ratio: Optional[float] = None
    wall_seconds: Optional[float] = None
    storage_bytes: Optional[int] = None
    asr: Optional[float] = None
    victim_accuracy: Optional[float] = None
    hyperparams: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    error: Optional[str] = None
    config_hash: str = ""
    duplicate: bool = False

    def __post_init__(self: Self) -> None:
        """Percentages stay in [0, 100]."""
        for name in ("ta", "ra", "fa_raw", "asr", "victim_accuracy"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise ValueError(f"{name}={value} is not a percentage")
        for kind, value in self.mia.items():
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"mia[{kind}]={value} is not a percentage")
        if self.status == RunStatus.FAILED and not self.error:
            log.warning("Failed row for %s carries no error message", self.method_id)

    @property
    def key(self: Self) -> tuple[str, str, int, int]:
        """Cell key."""
        return (self.method_id, self.scenario, self.budget, self.seed)
