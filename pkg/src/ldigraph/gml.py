"""LDI-guided triplet construction and the combined metric-learning loss.

Anchors are drawn from the training nodes after removing the hardest
(highest-LDI) fraction; for each anchor the negative is the nearest
different-class node inside its K-hop neighborhood and the positive is
the farthest same-class node outside it. The hinge scores of the
top-rho triplets form the metric loss, blended with the focal term on
a linearly decaying schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import Graph, k_hop_neighborhood

_DIST_EPS = 1e-12


@dataclass(frozen=True)
class GmlConfig:
    k_hops: int = 2
    margin: float = 0.2
    hard_fraction: float = 0.10
    rho: float = 0.3
    epsilon: float = 0.001
    anchors_per_epoch: int = 256

    def __post_init__(self):
        if not 0.0 <= self.hard_fraction < 1.0:
            raise ValueError("hard_fraction must be in [0, 1)")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k_hops < 1:
            raise ValueError("k_hops must be >= 1")


@dataclass
class Triplet:
    anchor: int
    positive: int
    negative: int
    score: float = float("nan")


def filter_hard(node_ids, ldi_values, fraction: float) -> np.ndarray:
    """Drop the ceil(fraction * n) highest-LDI nodes; LDI ties drop higher ids."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    node_ids = np.asarray(node_ids, dtype=np.int64)
    ldi_values = np.asarray(ldi_values, dtype=np.float64)
    k = int(np.ceil(fraction * node_ids.size))
    if k == 0:
        return np.sort(node_ids)
    order = np.lexsort((node_ids, ldi_values))   # ascending (ldi, id)
    return np.sort(node_ids[order[:-k]])


def select_anchors(eligible, ldi_values, count: int, rng: np.random.Generator,
                   epsilon: float = 0.001) -> np.ndarray:
    """Draw anchors without replacement, probability ~ (ldi + epsilon)."""
    eligible = np.asarray(eligible, dtype=np.int64)
    if eligible.size == 0:
        raise ValueError("no eligible anchors")
    if count > eligible.size:
        raise ValueError("count exceeds eligible pool")
    weights = np.asarray(ldi_values, dtype=np.float64) + epsilon
    probs = weights / weights.sum()
    return rng.choice(eligible, size=count, replace=False, p=probs)


def _sq_dists(embeddings: np.ndarray, anchor: int, others: np.ndarray) -> np.ndarray:
    diff = embeddings[others] - embeddings[anchor]
    return (diff * diff).sum(axis=1)


def build_triplet(anchor: int, embeddings: np.ndarray, g: Graph, labels,
                  k: int, candidates=None) -> Triplet | None:
    """Fig-7 style candidate rule; None when either pool is empty.

    Distance ties pick the lowest node id (candidate pools are scanned
    in ascending id order).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if candidates is None:
        pool = np.arange(g.num_nodes)
    else:
        pool = np.unique(np.asarray(list(candidates), dtype=np.int64))
    khop = k_hop_neighborhood(g, anchor, k)
    anchor_class = labels[anchor]

    in_hop = np.array(sorted(v for v in khop if v in set(pool.tolist())), dtype=np.int64)
    negatives = in_hop[labels[in_hop] != anchor_class] if in_hop.size else in_hop
    if negatives.size == 0:
        return None

    outside = pool[(~np.isin(pool, list(khop))) & (pool != anchor)]
    positives = outside[labels[outside] == anchor_class]
    if positives.size == 0:
        return None

    neg = int(negatives[np.argmin(_sq_dists(embeddings, anchor, negatives))])
    pos = int(positives[np.argmax(_sq_dists(embeddings, anchor, positives))])
    return Triplet(anchor=anchor, positive=pos, negative=neg)


def _distance_col(tape, emb: Tensor, a_ids, b_ids) -> Tensor:
    a = ad.gather_rows(tape, emb, a_ids)
    b = ad.gather_rows(tape, emb, b_ids)
    diff = ad.add(tape, a, ad.mul_scalar(tape, b, -1.0))
    sq = ad.hadamard(tape, diff, diff)
    ones = Tensor(np.ones((emb.shape[1], 1)))
    return ad.sqrt(tape, ad.add_scalar(tape, ad.matmul(tape, sq, ones), _DIST_EPS))


def score_and_select(tape: Tape | None, embeddings: Tensor, triplets: list[Triplet],
                     margin: float, rho: float) -> tuple[Tensor | None, list[Triplet]]:
    """Hinge-score all triplets, keep the top ceil(rho * n), average their scores.

    Returns (loss, selected); the loss is differentiable through the
    embedding distances and None when no triplets were supplied.
    Score ties keep the earlier triplet.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    if not triplets:
        return None, []
    anchors = np.array([t.anchor for t in triplets])
    positives = np.array([t.positive for t in triplets])
    negatives = np.array([t.negative for t in triplets])

    d_ap = _distance_col(tape, embeddings, anchors, positives)
    d_an = _distance_col(tape, embeddings, anchors, negatives)
    gap = ad.add(tape, d_ap, ad.mul_scalar(tape, d_an, -1.0))
    scores = ad.relu(tape, ad.add_scalar(tape, gap, margin))

    values = scores.value[:, 0]
    for t, s in zip(triplets, values):
        t.score = float(s)
    keep = int(np.ceil(rho * len(triplets)))
    order = np.lexsort((np.arange(len(triplets)), -values))[:keep]
    order = np.sort(order)

    picked = ad.gather_rows(tape, scores, order)
    loss = ad.mul_scalar(tape, ad.sum_all(tape, picked), 1.0 / keep)
    return loss, [triplets[i] for i in order]


def metric_weight(epoch: int, total_epochs: int) -> float:
    """Cumulative schedule: the metric term fades out linearly."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError("epoch out of range")
    return 1.0 - epoch / total_epochs


def gml_loss(tape: Tape | None, triplet_term: Tensor | None, ifl_term: Tensor,
             epoch: int, total_epochs: int) -> Tensor:
    """f(e) * L_ML + L_iFL with f(e) = 1 - e / total."""
    if triplet_term is None:
        return ifl_term
    f = metric_weight(epoch, total_epochs)
    return ad.add(tape, ad.mul_scalar(tape, triplet_term, f), ifl_term)
