from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from utils.model import CLASS_NAMES, N_CLASSES


def confusion_matrix(true_labels: Sequence[int], predictions: Sequence[int], n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    if len(true_labels) != len(predictions):
        raise ValueError(f"{len(true_labels)} labels but {len(predictions)} predictions")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true_labels, predictions):
        if not (0 <= t < n_classes and 0 <= p < n_classes):
            raise IndexError(f"class index out of range: true {t}, predicted {p}")
        matrix[t, p] += 1
    return matrix


def _ratio(numerator: float, denominator: float):
    """Returns (value, zero_division)."""
    if denominator == 0:
        return 0.0, True
    return numerator / denominator, False


@dataclass
class PerClassMetrics:
    confusion: np.ndarray
    precision: Dict[str, float] = field(default_factory=dict)
    recall: Dict[str, float] = field(default_factory=dict)
    f1: Dict[str, float] = field(default_factory=dict)
    # class -> which quantities hit a zero denominator
    zero_division: Dict[str, List[str]] = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, confusion: np.ndarray, class_names: Sequence[str] = CLASS_NAMES) -> "PerClassMetrics":
        confusion = np.asarray(confusion, dtype=np.int64)
        metrics = cls(confusion=confusion)
        for k, name in enumerate(class_names):
            tp = float(confusion[k, k])
            precision, p_flag = _ratio(tp, float(confusion[:, k].sum()))
            recall, r_flag = _ratio(tp, float(confusion[k, :].sum()))
            f1, f_flag = _ratio(2.0 * precision * recall, precision + recall)
            metrics.precision[name] = precision
            metrics.recall[name] = recall
            metrics.f1[name] = f1
            flags = [q for q, hit in (("precision", p_flag), ("recall", r_flag), ("f1", f_flag)) if hit]
            if flags:
                metrics.zero_division[name] = flags
        return metrics

    @classmethod
    def from_predictions(cls, true_labels: Sequence[int], predictions: Sequence[int]) -> "PerClassMetrics":
        return cls.from_confusion(confusion_matrix(true_labels, predictions))

    @property
    def classes(self) -> List[str]:
        return list(self.precision)

    @property
    def macro_precision(self) -> float:
        return float(np.mean(list(self.precision.values())))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(list(self.recall.values())))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(list(self.f1.values())))

    @property
    def accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0
