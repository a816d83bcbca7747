"""Binary-classification evaluation: confusion counts and derived scores.

Ratios with a zero denominator return None (the undefined marker) instead
of a silent zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ParameterError, ShapeError

CSV_COLUMNS = ("accuracy", "precision", "recall", "f1", "ap", "mcc", "auc")


@dataclass(frozen=True)
class Confusion:
    """Counts of true/false positives/negatives."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            val = getattr(self, name)
            if not (isinstance(val, int) and val >= 0):
                raise ParameterError(f"{name} must be a nonnegative integer, got {val!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _binary(seq, name):
    arr = np.asarray(seq)
    if not np.all((arr == 0) | (arr == 1)):
        raise ParameterError(f"{name} must contain only 0 and 1")
    return arr.astype(int)


def confusion_from_labels(preds, labels) -> Confusion:
    """Count the confusion cells of binary predictions against labels."""
    preds = _binary(preds, "preds")
    labels = _binary(labels, "labels")
    if preds.shape != labels.shape:
        raise ShapeError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    if preds.size == 0:
        raise EmptyInputError("confusion_from_labels needs at least one sample")
    return Confusion(
        tp=int(np.sum((preds == 1) & (labels == 1))),
        fp=int(np.sum((preds == 1) & (labels == 0))),
        tn=int(np.sum((preds == 0) & (labels == 0))),
        fn=int(np.sum((preds == 0) & (labels == 1))),
    )


def precision(c: Confusion) -> float | None:
    """tp / (tp + fp), or None when nothing was predicted positive."""
    denom = c.tp + c.fp
    return None if denom == 0 else c.tp / denom


def recall(c: Confusion) -> float | None:
    """tp / (tp + fn), or None when there are no actual positives."""
    denom = c.tp + c.fn
    return None if denom == 0 else c.tp / denom


def f1_accuracy(c: Confusion) -> tuple[float | None, float | None]:
    """(f1, accuracy); undefined markers propagate from precision/recall."""
    p, r = precision(c), recall(c)
    if p is None or r is None:
        f1 = None
    elif p + r == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * p * r / (p + r)
    acc = None if c.total == 0 else (c.tp + c.tn) / c.total
    return f1, acc


def _scores_labels(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = _binary(labels, "labels")
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores shape {scores.shape} incompatible with labels shape {labels.shape}")
    if scores.size == 0:
        raise EmptyInputError("need at least one scored sample")
    return scores, labels


def average_precision(scores, labels) -> float | None:
    """Threshold-sweep average precision: sum of precision * recall-step.

    Thresholds are the distinct score values in descending order; each step
    admits every sample tied at that score.  None when there are no
    positive labels.
    """
    scores, labels = _scores_labels(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        gained = int(l[i:j].sum())
        tp += gained
        fp += (j - i) - gained
        rec = tp / n_pos
        prec = tp / (tp + fp)
        ap += prec * (rec - prev_recall)
        prev_recall = rec
        i = j
    return ap


def mcc(c: Confusion) -> float | None:
    """Matthews correlation coefficient; None when any marginal is zero."""
    marginals = ((c.tp + c.fp), (c.tp + c.fn), (c.tn + c.fp), (c.tn + c.fn))
    if any(m == 0 for m in marginals):
        return None
    num = c.tp * c.tn - c.fp * c.fn
    return num / math.sqrt(float(marginals[0]) * marginals[1] * marginals[2] * marginals[3])


def auc_roc(scores, labels) -> float | None:
    """Trapezoidal area under the ROC curve.

    Tied scores form a single threshold step, which makes the trapezoid rule
    equivalent to the midrank pairwise statistic.  None unless both classes
    are present.
    """
    scores, labels = _scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    auc = 0.0
    tp = fp = 0
    prev_tpr = prev_fpr = 0.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        gained = int(l[i:j].sum())
        tp += gained
        fp += (j - i) - gained
        tpr, fpr = tp / n_pos, fp / n_neg
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        prev_tpr, prev_fpr = tpr, fpr
        i = j
    return auc


@dataclass(frozen=True)
class MetricsReport:
    """Derived scores; None marks a score whose denominator vanished."""

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    ap: float | None
    mcc: float | None
    auc: float | None

    @classmethod
    def from_scores(cls, scores, labels, threshold: float = 0.5) -> "MetricsReport":
        """Score a binary problem: threshold the scores, count, derive."""
        scores = np.asarray(scores, dtype=float)
        preds = (scores >= threshold).astype(int)
        c = confusion_from_labels(preds, labels)
        f1, acc = f1_accuracy(c)
        return cls(
            accuracy=acc,
            precision=precision(c),
            recall=recall(c),
            f1=f1,
            ap=average_precision(scores, labels),
            mcc=mcc(c),
            auc=auc_roc(scores, labels),
        )

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in CSV_COLUMNS}
