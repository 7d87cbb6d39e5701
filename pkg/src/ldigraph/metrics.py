"""Evaluation metrics for one prediction set: accuracy, G-mean, macro F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Metrics:
    accuracy: float
    g_mean: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray   # rows true class, cols predicted

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "g_mean": self.g_mean,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
        }


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction/label length mismatch")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def score_predictions(y_true, y_pred, num_classes: int) -> Metrics:
    """All metrics from one confusion matrix.

    G-mean is the geometric mean of per-class recalls over classes with
    nonzero support; per-class F1 is 0 when the class has neither
    predicted nor true positives.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("empty evaluation set")
    cm = confusion_matrix(y_true, y_pred, num_classes)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm).astype(np.float64)

    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(support > 0, tp / support, 0.0)
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)

    present = support > 0
    if present.any():
        g_mean = float(np.prod(recall[present]) ** (1.0 / present.sum()))
    else:
        g_mean = 0.0

    return Metrics(
        accuracy=float(tp.sum() / y_true.size),
        g_mean=g_mean,
        macro_f1=float(f1.mean()),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=cm,
    )
