"""fume/metrics/classification.py"""

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Tuple

import numpy as np

NUM_CLASSES = 3


@dataclass
class ConfusionMatrix:
    """3x3 counts, rows = truth, columns = prediction."""
    counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    def update(self, truth: Sequence[int], pred: Sequence[int]) -> "ConfusionMatrix":
        truth = np.asarray(truth, dtype=np.intp).reshape(-1)
        pred = np.asarray(pred, dtype=np.intp).reshape(-1)
        np.add.at(self.counts, (truth, pred), 1)
        return self

    @classmethod
    def from_predictions(cls, truth, pred) -> "ConfusionMatrix":
        return cls().update(truth, pred)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


class ClassificationMetrics(NamedTuple):
    """
    All values in percent. ``balanced_accuracy`` is the mean recall of the
    classes that occur in the truth.
    """
    accuracy: float
    f1_per_class: Tuple[float, ...]
    macro_f1: float
    balanced_accuracy: float


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def classification_metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    """
    Accuracy, per-class F1, macro F1 and balanced accuracy from a confusion matrix.

    F1 of a class with no true and no predicted samples is 0 and still
    counts toward macro F1. Balanced accuracy averages recall over the
    classes present in the truth only; a class with no true samples has no
    recall and is left out rather than scored 0.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    total = counts.sum()
    accuracy = float(tp.sum() / total) if total else 0.0
    present = support > 0
    balanced = float(recall[present].mean()) if present.any() else 0.0
    return ClassificationMetrics(
        accuracy=100.0 * accuracy,
        f1_per_class=tuple(float(100.0 * v) for v in f1),
        macro_f1=float(100.0 * f1.mean()),
        balanced_accuracy=100.0 * balanced,
    )
