"""Evaluation metrics: accuracy, per-class/macro F1, EER, reports.

EER follows the detection convention: a trial is accepted when its
score is >= the threshold.  FAR(t) is the fraction of non-target trials
accepted, FRR(t) the fraction of target trials rejected.  The EER is
read off the (FAR, FRR) operating curve at thresholds placed on every
observed score, linearly interpolated between the two operating points
straddling FAR = FRR.

Multiclass runs report the unweighted mean of one-vs-rest EERs and
macro-averaged F1; both choices are recorded in the report metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError

REPORT_METADATA = {
    "f1_average": "macro",
    "f1_zero_division": "zero",
    "eer_aggregation": "mean_one_vs_rest",
    "eer_interpolation": "linear",
}


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise DataError(f"prediction/label length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise DataError("accuracy of empty input is undefined")
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """C x C count matrix; rows are true labels, columns predictions."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0:
        raise DataError("confusion matrix of empty input is undefined")
    if labels.min() < 0 or labels.max() >= num_classes or preds.min() < 0 or preds.max() >= num_classes:
        raise DataError("label or prediction outside [0, num_classes)")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (labels, preds), 1)
    return mat


def f1(preds, labels, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class F1 plus macro-F1, with the 0/0 -> 0 convention."""
    mat = confusion_matrix(preds, labels, num_classes)
    tp = np.diag(mat).astype(np.float64)
    pred_count = mat.sum(axis=0).astype(np.float64)
    true_count = mat.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_count, out=np.zeros(num_classes), where=pred_count > 0)
    recall = np.divide(tp, true_count, out=np.zeros(num_classes), where=true_count > 0)
    pr = precision + recall
    per_class = np.divide(2 * precision * recall, pr, out=np.zeros(num_classes), where=pr > 0)
    return per_class, float(per_class.mean())


@dataclass(frozen=True)
class ScoreSet:
    """Detection trials: one real-valued score per trial plus its truth."""

    scores: np.ndarray
    is_target: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        is_target = np.asarray(self.is_target, dtype=bool)
        if scores.shape != is_target.shape or scores.ndim != 1:
            raise DataError("scores and is_target must be equal-length 1-D arrays")
        if not is_target.any():
            raise DataError("score set has no target trials")
        if is_target.all():
            raise DataError("score set has no non-target trials")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "is_target", is_target)


def eer(score_set: ScoreSet) -> float:
    """Equal error rate of a binary detection score set.

    Thresholds sweep every distinct observed score plus a sentinel above
    the maximum; accept means score >= threshold.
    """
    tgt = np.sort(score_set.scores[score_set.is_target])
    non = np.sort(score_set.scores[~score_set.is_target])
    thresholds = np.unique(score_set.scores)

    # At threshold t: FAR = #(non >= t) / #non, FRR = #(tgt < t) / #tgt.
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / len(non)
    frr = np.searchsorted(tgt, thresholds, side="left") / len(tgt)
    far = np.append(far, 0.0)  # sentinel threshold above every score
    frr = np.append(frr, 1.0)

    diff = far - frr  # non-increasing along the sweep
    cross = int(np.argmax(diff <= 0.0))
    if cross == 0:
        return float(far[0])
    d1, d2 = diff[cross - 1], diff[cross]
    alpha = d1 / (d1 - d2)
    return float(far[cross - 1] + alpha * (far[cross] - far[cross - 1]))


def multiclass_eer(scores: np.ndarray, labels, skip_absent: bool = False) -> float:
    """Unweighted mean of one-vs-rest EERs over the score-matrix columns.

    ``scores`` is N x C; column c scores the hypothesis "trial is class
    c", with targets the trials labeled c.  A class with no targets (or
    no non-targets) is an error unless ``skip_absent`` is set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DataError("scores must be N x C with one label per row")
    per_class = []
    for c in range(scores.shape[1]):
        is_target = labels == c
        if is_target.all() or not is_target.any():
            if skip_absent:
                continue
            raise DataError(f"class {c} has no target or no non-target trials")
        per_class.append(eer(ScoreSet(scores[:, c], is_target)))
    if not per_class:
        raise DataError("no class had both target and non-target trials")
    return float(np.mean(per_class))


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1_per_class: tuple[float, ...]
    f1_macro: float
    eer: float
    confusion: tuple[tuple[int, ...], ...]
    n: int
    metadata: dict

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "f1_per_class": list(self.f1_per_class),
            "eer": self.eer,
            "confusion": [list(row) for row in self.confusion],
            "n": self.n,
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        raw = json.loads(text)
        return MetricsReport(
            accuracy=raw["accuracy"],
            f1_per_class=tuple(raw["f1_per_class"]),
            f1_macro=raw["f1_macro"],
            eer=raw["eer"],
            confusion=tuple(tuple(row) for row in raw["confusion"]),
            n=raw["n"],
            metadata=raw["metadata"],
        )


def make_report(preds, probs, labels) -> MetricsReport:
    """Assemble accuracy, F1, EER and the confusion matrix for one run.

    ``probs`` is the N x C score matrix (softmax probabilities or margin
    scores).  Classes absent from the labels are flagged in metadata and
    skipped by the EER average; their F1 is 0 by convention.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != preds.shape[0] or preds.shape != labels.shape:
        raise DataError("preds, probs and labels must agree on the trial count")
    num_classes = probs.shape[1]
    per_class, macro = f1(preds, labels, num_classes)
    present = np.bincount(labels, minlength=num_classes) > 0
    metadata = dict(REPORT_METADATA)
    absent = [int(c) for c in range(num_classes) if not present[c]]
    if absent:
        metadata["absent_classes"] = absent
    return MetricsReport(
        accuracy=accuracy(preds, labels),
        f1_per_class=tuple(float(x) for x in per_class),
        f1_macro=macro,
        eer=multiclass_eer(probs, labels, skip_absent=bool(absent)),
        confusion=tuple(tuple(int(x) for x in row) for row in confusion_matrix(preds, labels, num_classes)),
        n=int(preds.shape[0]),
        metadata=metadata,
    )
