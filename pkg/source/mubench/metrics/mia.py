"""Membership inference efficacy over five output features.

A logistic predictor is fit on balanced samples of retained (member) and test (non-member) data, then applied to
the forget set. Efficacy is the share of forget samples it calls non-members.
"""

import logging as log
from typing import Optional

import numpy as np
from opentelemetry import trace
from sklearn.linear_model import LogisticRegression

import mubench

from ..config import MiaFeatureKind
from ..constants import MIA_MAX_PER_SIDE, MIA_TOLERANCE, PROB_CLAMP
from ..domain import EmptyDatasetError, LabeledDataset, MiaPredictor, ShapeMismatchError
from ..substrate.inference import Classifier, predict_labels, probabilities
from ..support.seeding import numpy_rng

tracer = trace.get_tracer(__name__, mubench.__version_str__)


def features_from_probabilities(
    probs: np.ndarray, labels: np.ndarray, predicted: np.ndarray, kind: MiaFeatureKind
) -> np.ndarray:
    """Feature matrix (N, d) from softmax outputs, true labels and predicted labels.

    Log terms clamp probabilities to [PROB_CLAMP, 1 − PROB_CLAMP].
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(labels) or len(predicted) != len(labels):
        raise ShapeMismatchError(f"probabilities {probs.shape} do not match {len(labels)} labels")
    rows = np.arange(len(labels))
    clamped = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_y = probs[rows, labels]
    match kind:
        case MiaFeatureKind.CORRECTNESS:
            out = (np.asarray(predicted) == labels).astype(np.float64)
        case MiaFeatureKind.CONFIDENCE:
            out = p_y
        case MiaFeatureKind.ENTROPY:
            out = -(probs * np.log(clamped)).sum(axis=1)
        case MiaFeatureKind.M_ENTROPY:
            others = probs * np.log(1.0 - clamped)
            others[rows, labels] = 0.0
            out = -(1.0 - p_y) * np.log(clamped[rows, labels]) - others.sum(axis=1)
        case MiaFeatureKind.PROB_VECTOR:
            return probs
        case _:
            raise ValueError(f"unknown MIA feature kind '{kind}'")
    return out.reshape(-1, 1)


def mia_features(model: Classifier, samples: LabeledDataset, kind: MiaFeatureKind) -> np.ndarray:
    """Membership features of `samples` under `model`."""
    probs = probabilities(model, samples.inputs).numpy()
    predicted = predict_labels(model, samples.inputs)
    return features_from_probabilities(probs, samples.labels.numpy(), predicted, kind)


def fit_mia_predictor(
    members: np.ndarray, non_members: np.ndarray, kind: MiaFeatureKind, meta: Optional[dict] = None
) -> MiaPredictor:
    """Logistic regression, member = 1, on standardised features; the scaling is folded back into the weights.

    A feature matrix with zero variance cannot separate anything: the result is the constant member predictor.
    """
    x = np.vstack([members, non_members]).astype(np.float64)
    y = np.concatenate([np.ones(len(members)), np.zeros(len(non_members))])
    meta = {**(meta or {}), "members": len(members), "non_members": len(non_members)}
    mean, std = x.mean(axis=0), x.std(axis=0)
    if not np.any(std > 0):
        log.warning("MIA %s features have zero variance, using the constant member predictor", kind.value)
        return MiaPredictor(kind, np.zeros(x.shape[1]), 0.0, {**meta, "degenerate": True})
    scale = np.where(std > 0, std, 1.0)
    clf = LogisticRegression(C=1.0, tol=MIA_TOLERANCE, solver="lbfgs", max_iter=1000, random_state=0)
    clf.fit((x - mean) / scale, y)
    weights = clf.coef_[0] / scale
    bias = float(clf.intercept_[0] - np.dot(clf.coef_[0], mean / scale))
    return MiaPredictor(kind, weights, bias, {**meta, "degenerate": False, "train_accuracy": float(clf.score((x - mean) / scale, y))})


@tracer.start_as_current_span(name="train_mia_predictor")
def train_mia_predictor(
    model: Classifier,
    retain: LabeledDataset,
    test: LabeledDataset,
    kind: MiaFeatureKind,
    n_per_side: Optional[int] = None,
    seed: int = 0,
) -> MiaPredictor:
    """Fit a predictor on `n_per_side` members drawn from D_r and as many non-members drawn from D_t.

    Args:
        model: Model under attack.
        retain: Member pool.
        test: Non-member pool.
        kind: Feature to use.
        n_per_side: Samples per side; defaults to min(|D_r|, |D_t|, MIA_MAX_PER_SIDE).
        seed: Seed of the balanced draw.
    """
    limit = min(len(retain), len(test))
    n = min(limit, MIA_MAX_PER_SIDE) if n_per_side is None else int(n_per_side)
    if n < 1:
        raise EmptyDatasetError("empty dataset: the MIA needs members and non-members")
    if n > limit:
        raise ValueError(f"n_per_side={n} exceeds the smaller pool ({limit})")
    rng = numpy_rng(seed, "mia", kind.value)
    members = np.sort(rng.choice(len(retain), size=n, replace=False))
    non_members = np.sort(rng.choice(len(test), size=n, replace=False))
    return fit_mia_predictor(
        mia_features(model, retain.subset(members), kind),
        mia_features(model, test.subset(non_members), kind),
        kind,
        {"seed": seed},
    )


def efficacy_from_features(predictor: MiaPredictor, forget_features: np.ndarray) -> float:
    """100 · TN / |D_f|, TN being the forget rows classified non-member."""
    if len(forget_features) == 0:
        raise EmptyDatasetError("empty dataset: the forget set is empty")
    true_negatives = int((~predictor.is_member(forget_features)).sum())
    return 100.0 * true_negatives / len(forget_features)


def mia_efficacy(predictor: MiaPredictor, model: Classifier, forget: LabeledDataset) -> float:
    """MIA-Efficacy of `model` on D_f, in percent."""
    if len(forget) == 0:
        raise EmptyDatasetError("empty dataset: the forget set is empty")
    return efficacy_from_features(predictor, mia_features(model, forget, predictor.kind))


def mia_suite(
    model: Classifier,
    retain: LabeledDataset,
    test: LabeledDataset,
    forget: LabeledDataset,
    kinds: Optional[list[MiaFeatureKind]] = None,
    seed: int = 0,
    n_per_side: Optional[int] = None,
) -> dict[str, float]:
    """Efficacy for every feature kind, keyed by kind value."""
    out = {}
    for kind in kinds or list(MiaFeatureKind):
        predictor = train_mia_predictor(model, retain, test, kind, n_per_side, seed)
        out[kind.value] = mia_efficacy(predictor, model, forget)
    return out
