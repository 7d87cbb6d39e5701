"""Losses and weighting strategies for class-imbalanced training.

The focal variants treat their modulating factors as constants: the
gradient of the loss with respect to the logits is the plain NLL
gradient scaled per node. Weight strategies: w1 inverse class
frequency, w2 exp(ldi), w3 their product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor


@dataclass
class WeightVector:
    """Positive per-node weights over a fixed node-id order."""

    node_ids: np.ndarray
    values: np.ndarray
    strategy: str

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.node_ids.shape:
            raise ValueError("weights and node ids must align")
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("weights must be positive and finite")


@dataclass
class ClassProbTracker:
    """Per-class mean correct-classification probability, updated once per epoch."""

    p_bar: np.ndarray
    epoch: int = -1

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassProbTracker":
        return cls(p_bar=np.full(num_classes, 1.0 / num_classes), epoch=-1)


def focal_loss(tape: Tape | None, log_probs: Tensor, labels, alpha, gamma: float) -> Tensor:
    """-sum_i alpha_{y_i} (1 - p_i)^gamma log p_i over the scored rows."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    labels = np.asarray(labels, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    p = np.exp(log_probs.value[np.arange(labels.size), labels])
    weights = alpha[labels] * (1.0 - p) ** gamma
    return ad.weighted_nll(tape, log_probs, labels, weights)


def ifl_loss(tape: Tape | None, log_probs: Tensor, labels, tracker: ClassProbTracker,
             gamma: float) -> Tensor:
    """Focal loss with the per-class mean probability as the modulating factor."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.max() >= len(tracker.p_bar):
        raise ValueError("label out of tracker range")
    weights = (1.0 - tracker.p_bar[labels]) ** gamma
    return ad.weighted_nll(tape, log_probs, labels, weights)


def update_class_probs(tracker: ClassProbTracker, log_probs: np.ndarray, labels,
                       scored, epoch: int | None = None) -> ClassProbTracker:
    """Refresh p_bar from an epoch-start forward pass over the training set.

    Classes with no scored node keep their previous value.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scored = np.asarray(scored, dtype=np.int64)
    p_bar = tracker.p_bar.copy()
    y = labels[scored]
    p = np.exp(log_probs[scored, y])
    for cls in np.unique(y):
        p_bar[cls] = p[y == cls].mean()
    return ClassProbTracker(p_bar=p_bar, epoch=tracker.epoch + 1 if epoch is None else epoch)


def weights_w1(labels, train_ids) -> WeightVector:
    """Label-based: N / N_c counted over the training set."""
    labels = np.asarray(labels, dtype=np.int64)
    train_ids = np.asarray(train_ids, dtype=np.int64)
    y = labels[train_ids]
    counts = np.bincount(y)
    if np.any(counts[np.unique(y)] == 0):
        raise ValueError("class with zero training nodes")
    values = train_ids.size / counts[y]
    return WeightVector(node_ids=train_ids, values=values, strategy="w1")


def weights_w2(ldi_values, train_ids) -> WeightVector:
    """LDI-based: e^{ldi} (never zero even when the index is)."""
    values = np.exp(np.asarray(ldi_values, dtype=np.float64))
    return WeightVector(node_ids=train_ids, values=values, strategy="w2")


def weights_w3(labels, train_ids, ldi_values) -> WeightVector:
    w1 = weights_w1(labels, train_ids)
    w2 = weights_w2(ldi_values, train_ids)
    return WeightVector(node_ids=w1.node_ids, values=w1.values * w2.values, strategy="w3")


def grs_sample(weights: WeightVector, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` draws with replacement, probability proportional to weight."""
    if count < 1:
        raise ValueError("count must be >= 1")
    probs = weights.values / weights.values.sum()
    return rng.choice(weights.node_ids, size=count, replace=True, p=probs)


def rescale_mean_one(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values / values.mean()


def grw_loss(per_node_losses, weights) -> float:
    """sum_i w_i * l_i with the weights rescaled to mean 1.

    The rescale makes the result invariant to positive rescaling of the
    raw weight vector.
    """
    losses = np.asarray(per_node_losses, dtype=np.float64)
    w = rescale_mean_one(np.asarray(weights, dtype=np.float64))
    if losses.shape != w.shape:
        raise ValueError("losses and weights must align")
    return float((w * losses).sum())
