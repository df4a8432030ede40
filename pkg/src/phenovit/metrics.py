"""Confusion matrices, accuracy, and balanced accuracy over annotated pixels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError


@dataclass
class ConfusionMatrix:
    """C x C counts; rows are ground truth, columns predictions."""

    counts: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.class_names)
        if self.counts.shape != (c, c):
            raise DataError(f"confusion counts must be {c}x{c}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(labels, predictions, class_names: list[str]) -> ConfusionMatrix:
    """Accumulate counts[gt][pred]; inputs must already exclude unlabeled pixels."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise DataError(f"labels {labels.shape} and predictions {predictions.shape} "
                        "must be equal-length vectors")
    c = len(class_names)
    for name, arr in (("label", labels), ("prediction", predictions)):
        bad = (arr < 0) | (arr >= c)
        if bad.any():
            i = int(np.argmax(bad))
            raise DataError(f"{name} out of range [0,{c}) at index {i}: {arr[i]}")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts, class_names)


def accuracy(cm: ConfusionMatrix) -> float:
    """Correctly classified fraction: trace / total."""
    if cm.total == 0:
        raise UsageError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Macro-average of per-class recall; classes absent from the ground
    truth are excluded from the mean."""
    row_sums = cm.counts.sum(axis=1)
    present = row_sums > 0
    if not present.any():
        raise UsageError("balanced accuracy needs at least one ground-truth pixel")
    recalls = np.diag(cm.counts)[present] / row_sums[present]
    return float(recalls.mean())


def per_class_recall(cm: ConfusionMatrix) -> dict[str, float | None]:
    """Recall per class name; None for classes with no ground-truth pixels."""
    row_sums = cm.counts.sum(axis=1)
    out: dict[str, float | None] = {}
    for i, name in enumerate(cm.class_names):
        out[name] = float(cm.counts[i, i] / row_sums[i]) if row_sums[i] > 0 else None
    return out


def row_normalize(cm: ConfusionMatrix) -> np.ndarray:
    """Row percentages (each row sums to 100); zero rows stay zero."""
    counts = cm.counts.astype(np.float64)
    row_sums = counts.sum(axis=1, keepdims=True)
    out = np.zeros_like(counts)
    np.divide(counts * 100.0, row_sums, out=out, where=row_sums > 0)
    return out


def confusion_to_csv(cm: ConfusionMatrix, percent: bool = False) -> str:
    """CSV with class names on both axes; optionally row-normalized percent."""
    table = row_normalize(cm) if percent else cm.counts
    lines = ["gt\\pred," + ",".join(cm.class_names)]
    for i, name in enumerate(cm.class_names):
        if percent:
            cells = ",".join(f"{v:.2f}" for v in table[i])
        else:
            cells = ",".join(str(int(v)) for v in table[i])
        lines.append(f"{name},{cells}")
    return "\n".join(lines) + "\n"


def confusion_to_json(cm: ConfusionMatrix) -> dict:
    return {"class_names": cm.class_names, "counts": cm.counts.tolist(),
            "row_percent": [[round(v, 2) for v in row] for row in row_normalize(cm)]}
