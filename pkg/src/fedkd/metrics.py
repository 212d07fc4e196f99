"""Classification metrics computed from a confusion matrix.

Accuracy is reported in percent; precision, recall and F1 are fractions in
[0, 1], per class plus macro and support-weighted averages. All undefined
ratios (no predictions for a class, no true members, P + R = 0) are
defined as 0 rather than NaN so downstream summaries stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError


def confusion_matrix(labels, predictions, num_classes: int = 6) -> np.ndarray:
    """Counts with true classes on rows and predicted classes on columns."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.ndim != 1 or labels.shape != predictions.shape:
        raise ConfigError(
            f"labels {labels.shape} and predictions {predictions.shape} must be "
            "equal-length vectors"
        )
    if labels.size == 0:
        raise DataError("cannot evaluate zero samples")
    for name, arr in (("labels", labels), ("predictions", predictions)):
        if not np.issubdtype(arr.dtype, np.integer):
            raise DataError(f"{name} must be integers")
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"{name} outside [0, {num_classes})")
    flat = labels.astype(np.int64) * num_classes + predictions
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


@dataclass(frozen=True)
class EvalReport:
    accuracy_percent: float
    confusion: np.ndarray
    support: np.ndarray
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "accuracy_percent": self.accuracy_percent,
            "sample_count": self.sample_count,
            "confusion": self.confusion.tolist(),
            "support": self.support.tolist(),
            "per_class": {
                "precision": self.per_class_precision.tolist(),
                "recall": self.per_class_recall.tolist(),
                "f1": self.per_class_f1.tolist(),
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
        }


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


# scalar summaries accumulate left-to-right in class order; with the
# per-class ratios fixed, every downstream float is order-deterministic
def _mean(values: np.ndarray) -> float:
    total = 0.0
    for value in values:
        total += float(value)
    return total / len(values)


def _support_weighted(values: np.ndarray, support: np.ndarray, n: int) -> float:
    total = 0.0
    for value, count in zip(values, support):
        total += float(value) * int(count)
    return total / n


def report_from_confusion(confusion: np.ndarray) -> EvalReport:
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ConfigError(f"confusion matrix must be square, got {confusion.shape}")
    if confusion.min() < 0:
        raise DataError("negative count in confusion matrix")
    n = int(confusion.sum())
    if n == 0:
        raise DataError("cannot evaluate zero samples")
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    support = confusion.sum(axis=1)
    precision = _safe_ratio(tp, predicted)
    recall = _safe_ratio(tp, support.astype(np.float64))
    f1 = _safe_ratio(2.0 * precision * recall, precision + recall)
    correct = int(tp.sum())
    return EvalReport(
        accuracy_percent=100.0 * correct / n,
        confusion=confusion.astype(np.int64),
        support=support.astype(np.int64),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_precision=_mean(precision),
        macro_recall=_mean(recall),
        macro_f1=_mean(f1),
        weighted_precision=_support_weighted(precision, support, n),
        weighted_recall=_support_weighted(recall, support, n),
        weighted_f1=_support_weighted(f1, support, n),
        sample_count=n,
    )


def evaluate(labels, predictions, num_classes: int = 6) -> EvalReport:
    return report_from_confusion(confusion_matrix(labels, predictions, num_classes))


def rounds_to_threshold(
    history: Sequence[tuple[int, float]], threshold_percent: float
) -> int | None:
    """First round whose accuracy reaches the threshold; None if none does.
    History rows are (round_index, accuracy_percent) in round order."""
    rounds = [r for r, _ in history]
    if any(b <= a for a, b in zip(rounds, rounds[1:])):
        raise ConfigError("history rounds must be strictly increasing")
    for round_index, accuracy in history:
        if accuracy >= threshold_percent:
            return round_index
    return None
