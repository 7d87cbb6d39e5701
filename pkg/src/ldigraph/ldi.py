"""Label difference index: per-node values, bounds, and aggregates.

The index of a node is the scaled L2 distance between the class
distribution of its labeled 1-hop neighbors and its own one-hot label:
0 means every labeled neighbor shares the node's class, 1 means all of
them share a single foreign class. Nodes with no labeled neighbor fall
back to their class mean, then to the global mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, UNLABELED


@dataclass
class LdiReport:
    """Per-node index values plus the aggregates analysis commands need."""

    ldi: np.ndarray                 # (num_nodes,), NaN where not scored
    scored: np.ndarray              # bool mask of scored nodes
    visible: np.ndarray             # bool mask of labels that were visible
    per_class_mean: np.ndarray      # (C,), NaN for classes with no scored node
    isolated_count: int             # scored nodes with no visible-labeled neighbor

    def values(self, nodes=None) -> np.ndarray:
        if nodes is None:
            return self.ldi[self.scored]
        return self.ldi[np.asarray(nodes, dtype=np.int64)]


@dataclass
class IntervalReport:
    edges: np.ndarray               # (bins+1,), 0 to 1
    counts: np.ndarray              # (bins,)
    accuracy: np.ndarray | None     # (bins,), NaN for empty bins


@dataclass
class LayerSweepRow:
    depth: int
    correct: int
    ratio: float | None
    accuracy: float


@dataclass
class LayerSweepReport:
    rows: list[LayerSweepRow]


def ldi_from_distribution(neighbor_dist: np.ndarray, own_class: int) -> float:
    """Index of a node from its neighborhood class distribution."""
    diff = np.asarray(neighbor_dist, dtype=np.float64).copy()
    diff[own_class] -= 1.0
    return float(np.linalg.norm(diff) / np.sqrt(2.0))


def compute_ldi(g: Graph, visible_labels=None) -> LdiReport:
    """Score every node whose label is visible.

    `visible_labels` is the node-id set whose labels may be consulted
    (default: all labeled nodes). Neighborhood distributions count only
    neighbors inside that set.
    """
    n, c = g.num_nodes, g.num_classes
    visible = np.zeros(n, dtype=bool)
    if visible_labels is None:
        visible[g.labeled_nodes()] = True
    else:
        ids = np.asarray(list(visible_labels), dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ValueError("visible node id out of range")
        visible[ids] = True
    if np.any(g.labels[visible] == UNLABELED):
        raise ValueError("visible set contains unlabeled nodes")
    if not visible.any():
        raise ValueError("visible label set is empty")

    src = np.repeat(np.arange(n, dtype=np.int64), g.degrees())
    dst = g.indices
    keep = visible[dst] & visible[src]
    neighbor_counts = np.zeros((n, c))
    np.add.at(neighbor_counts, (src[keep], g.labels[dst[keep]]), 1.0)

    deg = neighbor_counts.sum(axis=1)
    connected = visible & (deg > 0)
    isolated = visible & (deg == 0)

    ldi = np.full(n, np.nan)
    if connected.any():
        dist = neighbor_counts[connected] / deg[connected, None]
        diff = dist.copy()
        rows = np.arange(diff.shape[0])
        diff[rows, g.labels[connected]] -= 1.0
        ldi[connected] = np.linalg.norm(diff, axis=1) / np.sqrt(2.0)

    per_class_mean = np.full(c, np.nan)
    for cls in range(c):
        member = connected & (g.labels == cls)
        if member.any():
            per_class_mean[cls] = ldi[member].mean()

    if isolated.any():
        if not connected.any():
            raise ValueError("no node has a visible-labeled neighbor; LDI undefined")
        global_mean = ldi[connected].mean()
        fallback = per_class_mean[g.labels[isolated]]
        fallback = np.where(np.isnan(fallback), global_mean, fallback)
        ldi[isolated] = fallback

    report = LdiReport(
        ldi=ldi,
        scored=visible.copy(),
        visible=visible,
        per_class_mean=per_class_mean,
        isolated_count=int(isolated.sum()),
    )
    # class means for classes whose every member was isolated
    for cls in range(c):
        member = visible & (g.labels == cls)
        if member.any() and np.isnan(report.per_class_mean[cls]):
            report.per_class_mean[cls] = ldi[member].mean()
    return report


def ldi_bounds(p_same: float, num_classes: int) -> tuple[float, float]:
    """Analytic bounds on the index given the homophilous proportion.

    The upper bound (1 - p_same) is attained exactly when all
    heterophilous neighbors share one class.
    """
    if not 0.0 <= p_same <= 1.0:
        raise ValueError("p_same must be in [0, 1]")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    delta = 1.0 - p_same
    k = num_classes - 1
    lower = delta * np.sqrt((1.0 + k * k) / (2.0 * k * k))
    return float(lower), float(delta)


def class_ldi_stats(report: LdiReport, labels: np.ndarray,
                    predictions: np.ndarray | None = None):
    """Per-class (count, mean ldi, optional mean accuracy) over scored nodes."""
    labels = np.asarray(labels, dtype=np.int64)
    c = len(report.per_class_mean)
    rows = []
    for cls in range(c):
        member = report.scored & (labels == cls)
        count = int(member.sum())
        mean = float(report.ldi[member].mean()) if count else float("nan")
        acc = None
        if predictions is not None and count:
            acc = float((np.asarray(predictions)[member] == cls).mean())
        rows.append({"class": cls, "count": count, "mean_ldi": mean, "mean_accuracy": acc})
    return rows


def interval_report(report: LdiReport, bins: int, labels: np.ndarray | None = None,
                    predictions: np.ndarray | None = None) -> IntervalReport:
    """Equal-width histogram of scored LDI values on [0, 1].

    The last bin is right-inclusive. When predictions are supplied the
    per-bin accuracy of the scored nodes is attached.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(0.0, 1.0, bins + 1)
    values = report.ldi[report.scored]
    idx = np.minimum((values * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)

    accuracy = None
    if predictions is not None:
        predictions = np.asarray(predictions)
        if predictions.shape[0] != report.ldi.shape[0]:
            raise ValueError("predictions length mismatch")
        if labels is None:
            raise ValueError("per-bin accuracy needs labels")
        correct = (predictions == np.asarray(labels))[report.scored]
        hits = np.bincount(idx, weights=correct.astype(np.float64), minlength=bins)
        with np.errstate(invalid="ignore"):
            accuracy = hits / counts
    return IntervalReport(edges=edges, counts=counts, accuracy=accuracy)


def layer_sweep_ratio(correct_sets: list[set[int]], report: LdiReport,
                      depths: list[int] | None = None,
                      accuracies: list[float] | None = None) -> LayerSweepReport:
    """Ratio of mean LDI of newly-wrong nodes to mean LDI of previously-correct.

    correct_sets[i] is the correctly predicted node set at consecutive
    depth i. The ratio is absent at the first depth and whenever the
    previous correct set or the newly-wrong set is empty, or the
    previous mean is zero.
    """
    if depths is None:
        depths = list(range(1, len(correct_sets) + 1))
    if accuracies is None:
        accuracies = [float("nan")] * len(correct_sets)
    rows = []
    for i, (depth, current) in enumerate(zip(depths, correct_sets)):
        ratio = None
        if i > 0:
            prev = correct_sets[i - 1]
            newly_wrong = prev - current
            if prev and newly_wrong:
                prev_mean = float(np.mean(report.values(sorted(prev))))
                if prev_mean > 0:
                    ratio = float(np.mean(report.values(sorted(newly_wrong)))) / prev_mean
        rows.append(LayerSweepRow(depth=depth, correct=len(current), ratio=ratio,
                                  accuracy=float(accuracies[i])))
    return LayerSweepReport(rows=rows)
