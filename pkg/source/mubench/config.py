"""Configurations for MUBench."""

from enum import Enum

ENV_VAR_MUBENCH_DATA = "MUBENCH_DATA"
ENV_VAR_MUBENCH_LOGLEVEL = "MUBENCH_LOGLEVEL"
ENV_VAR_MUBENCH_CIFAR10_DIR = "MUBENCH_CIFAR10_DIR"

DEFAULT_DATA_DIR = "_runs"


class DatasetSplit(str, Enum):
    """Dataset splits."""

    TRAIN = "train"
    TEST = "test"


class DatasetKind(str, Enum):
    """Dataset sources the harness knows how to load."""

    CIFAR10 = "cifar10"
    SYNTHETIC = "synthetic"
    CSV = "csv"


class ArchKind(str, Enum):
    """Network families. All are plain feed-forward stacks without running statistics so a flat parameter vector is the whole state."""

    LOGISTIC = "logistic"
    MLP = "mlp"
    CNN = "cnn"


class LrSchedule(str, Enum):
    """Learning rate schedules."""

    COSINE = "cosine"
    CONSTANT = "constant"


class ScenarioKind(str, Enum):
    """The six forgetting scenarios."""

    ONE_CLASS = "one_class"
    ALL_CLASSES = "all_classes"
    CLASS_WISE = "class_wise"
    WORST_CASE = "worst_case"
    BEST_CASE = "best_case"
    DEPOISON = "depoison"


class PoisonKind(str, Enum):
    """Poisoning attacks used by the depoisoning scenario."""

    LABEL_FLIP = "label_flip"
    BACKDOOR = "backdoor"


class TriggerLocation(str, Enum):
    """Corner the backdoor trigger is stamped into."""

    BOTTOM_RIGHT = "bottom_right"
    BOTTOM_LEFT = "bottom_left"
    TOP_RIGHT = "top_right"
    TOP_LEFT = "top_left"


class AsrConvention(str, Enum):
    """Which test samples count in the attack success rate denominator."""

    EXCLUSIVE = "exclusive"
    """Samples whose true label is the target class are excluded."""
    INCLUSIVE = "inclusive"
    """Every test sample counts."""


class MiaFeatureKind(str, Enum):
    """Membership inference features."""

    CORRECTNESS = "correctness"
    CONFIDENCE = "confidence"
    ENTROPY = "entropy"
    M_ENTROPY = "m_entropy"
    PROB_VECTOR = "prob_vector"


class RunStatus(str, Enum):
    """Outcome of a matrix cell."""

    OK = "ok"
    FAILED = "failed"
