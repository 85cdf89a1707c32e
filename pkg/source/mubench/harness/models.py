"""Experiment configuration models.

An experiment is one JSON document. Unknown keys are rejected, so are unknown method ids and unknown per-method
hyperparameters.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Optional

try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..config import (
    ArchKind,
    AsrConvention,
    DatasetKind,
    LrSchedule,
    MiaFeatureKind,
    PoisonKind,
    ScenarioKind,
    TriggerLocation,
)
from ..constants import (
    BACKDOOR_TARGET_CLASS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CNN_WIDTHS,
    DEFAULT_EPOCHS,
    DEFAULT_HIDDEN_UNITS,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_TARGET_CLASS,
    DEFAULT_WEIGHT_DECAY,
    LABEL_FLIP_PAIRS,
    SUB_RETAIN_FRACTION,
    TRIGGER_SIZE,
    TRIGGER_VALUE,
)
from ..domain import ArchSpec, PoisonSpec, TrainConfig
from ..unlearners import get_method


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSettings(_Strict):
    """Where the train and test splits come from."""

    kind: DatasetKind = DatasetKind.SYNTHETIC
    root: Optional[str] = None
    """CIFAR-10 batch directory; defaults to `MUBENCH_CIFAR10_DIR`."""
    per_class_train: Optional[int] = Field(default=None, ge=1)
    per_class_test: Optional[int] = Field(default=None, ge=1)
    num_classes: int = Field(default=10, ge=2)
    input_shape: tuple[int, int, int] = (1, 8, 8)
    """Synthetic inputs only; CIFAR-10 and CSV carry their own shape."""
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    seed: int = 0
    """Seed of the synthetic draw or of the per-class subset."""

    @model_validator(mode="after")
    def _check_source(self: Self) -> Self:
        if self.kind == DatasetKind.CSV and not (self.train_csv and self.test_csv):
            raise ValueError("csv datasets need both train_csv and test_csv")
        if self.kind == DatasetKind.SYNTHETIC and not (self.per_class_train and self.per_class_test):
            raise ValueError("synthetic datasets need per_class_train and per_class_test")
        return self


class ArchSettings(_Strict):
    """Network family and widths. Input shape and class count follow the dataset."""

    kind: ArchKind = ArchKind.CNN
    widths: tuple[int, ...] = DEFAULT_CNN_WIDTHS
    hidden: int = Field(default=DEFAULT_HIDDEN_UNITS, ge=1)

    def to_arch(self: Self, input_shape: tuple[int, int, int], num_classes: int) -> ArchSpec:
        """Domain descriptor for a dataset."""
        return ArchSpec(self.kind, tuple(input_shape), num_classes, tuple(self.widths), self.hidden)


class TrainSettings(_Strict):
    """Optimiser settings of the original (and retrained) model."""

    epochs: int = Field(default=DEFAULT_EPOCHS, ge=1)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    lr: float = Field(default=DEFAULT_LR, gt=0)
    momentum: float = Field(default=DEFAULT_MOMENTUM, ge=0, lt=1)
    nesterov: bool = True
    schedule: LrSchedule = LrSchedule.COSINE
    weight_decay: float = Field(default=DEFAULT_WEIGHT_DECAY, ge=0)
    augmentation: bool = False

    def to_train_config(self: Self, arch: ArchSpec, seed: int) -> TrainConfig:
        """Domain config for one seed."""
        return TrainConfig(
            arch=arch,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            nesterov=self.nesterov,
            schedule=self.schedule,
            weight_decay=self.weight_decay,
            augmentation=self.augmentation,
            seed=seed,
        )


class PoisonSettings(_Strict):
    """Attack of a depoison scenario. The scenario budgets are the poison budgets."""

    kind: PoisonKind = PoisonKind.BACKDOOR
    flip_pairs: tuple[tuple[int, int], ...] = LABEL_FLIP_PAIRS
    trigger_size: int = Field(default=TRIGGER_SIZE, ge=1)
    trigger_location: TriggerLocation = TriggerLocation.BOTTOM_RIGHT
    trigger_value: float = TRIGGER_VALUE
    target_class: int = Field(default=BACKDOOR_TARGET_CLASS, ge=0)

    def to_spec(self: Self, budget: int, seed: int) -> PoisonSpec:
        """Domain spec for one budget and seed."""
        return PoisonSpec(
            kind=self.kind,
            budget=budget,
            flip_pairs=tuple(tuple(p) for p in self.flip_pairs),  # type: ignore[misc]
            trigger_size=self.trigger_size,
            trigger_location=self.trigger_location,
            trigger_value=self.trigger_value,
            target_class=self.target_class,
            seed=seed,
        )


class ScenarioSettings(_Strict):
    """One scenario and its budget grid.

    Budgets are sample counts; `budget_percents` is converted per dataset (class population for one_class).
    """

    kind: ScenarioKind
    class_id: int = Field(default=DEFAULT_TARGET_CLASS, ge=0)
    budgets: list[int] = Field(default_factory=list)
    budget_percents: list[float] = Field(default_factory=list)
    poison: Optional[PoisonSettings] = None

    @field_validator("budgets")
    @classmethod
    def _positive_budgets(cls, value: list[int]) -> list[int]:
        if any(b <= 0 for b in value):
            raise ValueError(f"budgets must be positive, got {value}")
        return value

    @field_validator("budget_percents")
    @classmethod
    def _percent_range(cls, value: list[float]) -> list[float]:
        if any(not 0 < p <= 100 for p in value):
            raise ValueError(f"budget percents must lie in (0, 100], got {value}")
        return value

    @model_validator(mode="after")
    def _check_kind(self: Self) -> Self:
        if self.kind == ScenarioKind.CLASS_WISE:
            if self.budgets or self.budget_percents:
                raise ValueError("class_wise scenarios forget the whole class and take no budgets")
        elif not (self.budgets or self.budget_percents):
            raise ValueError(f"'{self.kind.value}' scenarios need budgets or budget_percents")
        if self.kind == ScenarioKind.DEPOISON and self.poison is None:
            raise ValueError("depoison scenarios need a poison section")
        if self.kind != ScenarioKind.DEPOISON and self.poison is not None:
            raise ValueError(f"'{self.kind.value}' scenarios take no poison section")
        return self


class MethodSettings(_Strict):
    """A registered method id with hyperparameter overrides."""

    id: str
    hyperparams: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_method(self: Self) -> Self:
        get_method(self.id).resolve_hyperparams(self.hyperparams)
        return self


class MetricsSettings(_Strict):
    """Metric toggles."""

    mia: bool = True
    mia_kinds: list[MiaFeatureKind] = Field(default_factory=lambda: list(MiaFeatureKind))
    mia_samples: Optional[int] = Field(default=None, ge=1)
    """Samples per side of the balanced MIA training set; defaults to min(|D_r|, |D_t|, 5000)."""
    l2: bool = True
    asr_convention: AsrConvention = AsrConvention.EXCLUSIVE
    include_original: bool = True
    """Also report the original (pre-unlearning) model as a row."""


class ExperimentConfig(_Strict):
    """The whole experiment matrix: methods × scenarios × budgets × seeds."""

    name: str = "experiment"
    dataset: DatasetSettings
    arch: ArchSettings = Field(default_factory=ArchSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)
    scenarios: list[ScenarioSettings] = Field(default_factory=list)
    methods: list[MethodSettings] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    metrics: MetricsSettings = Field(default_factory=MetricsSettings)
    out: Optional[str] = None
    sub_retain_fraction: float = Field(default=SUB_RETAIN_FRACTION, ge=0, le=1)
    augment_during_unlearning: bool = False
    workers: int = Field(default=1, ge=1)

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, value: list[int]) -> list[int]:
        if len(set(value)) != len(value):
            raise ValueError(f"seeds must be distinct, got {value}")
        return value

    @model_validator(mode="after")
    def _unique_methods(self: Self) -> Self:
        ids = [m.id for m in self.methods]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ValueError(f"methods listed twice: {', '.join(duplicates)}")
        return self

    def config_hash(self: Self) -> str:
        """sha256 of the canonical JSON dump."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_methods(self: Self, ids: list[str]) -> "ExperimentConfig":
        """Copy restricted to `ids`, in config order.

        Raises:
            UnknownMethodError: an id is not registered.
            ValueError: an id is registered but not part of this config.
        """
        for method_id in ids:
            get_method(method_id)
        missing = sorted(set(ids) - {m.id for m in self.methods})
        if missing:
            raise ValueError(f"methods not in the config: {', '.join(missing)}")
        return self.model_copy(update={"methods": [m for m in self.methods if m.id in ids]})

    def with_seeds(self: Self, seeds: list[int]) -> "ExperimentConfig":
        """Copy with another seed list."""
        return ExperimentConfig.model_validate({**self.model_dump(mode="json"), "seeds": seeds})


def load_config(path: Path | str) -> ExperimentConfig:
    """Read and validate a JSON experiment config.

    Raises:
        FileNotFoundError: `path` does not exist.
        pydantic.ValidationError: the document does not validate.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file '{path}' not found")
    return ExperimentConfig.model_validate_json(path.read_text(encoding="utf-8"))
