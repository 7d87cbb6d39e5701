"""Bilateral-branch training: graph branch plus reverse-sampled edge-free branch.

Both branches emit full logit matrices; the blend alpha decays linearly
over training and is pinned to 0.5 for validation and testing. The
lower branch's loss set is drawn with probability proportional to the
configured weight strategy, pulling minority and high-LDI nodes forward
as alpha shrinks.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .imbalance import ClassProbTracker, WeightVector, grs_sample, ifl_loss

EVAL_ALPHA = 0.5


def alpha_schedule(epoch: int, total_epochs: int) -> float:
    """Linear decay from 1 to 0 across training."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError("epoch out of range")
    return 1.0 - epoch / total_epochs


def reverse_sample(weights: WeightVector, count: int, rng: np.random.Generator) -> np.ndarray:
    """Weight-proportional draws with replacement for the lower branch."""
    return grs_sample(weights, count, rng)


def blend_logits(tape: Tape | None, x_g: Tensor, x_de: Tensor, alpha: float) -> Tensor:
    """z = alpha * x_g + (1 - alpha) * x_de."""
    if x_g.shape != x_de.shape:
        raise ValueError(f"branch logit shapes differ: {x_g.shape} vs {x_de.shape}")
    return ad.add(tape,
                  ad.mul_scalar(tape, x_g, alpha),
                  ad.mul_scalar(tape, x_de, 1.0 - alpha))


def gbbn_loss(tape: Tape | None, z: Tensor, labels, y_g, y_de,
              tracker: ClassProbTracker, gamma: float, alpha: float) -> Tensor:
    """alpha * iFL over y_g + (1 - alpha) * iFL over y_de, each a mean.

    Gradients reach both branches through z. A branch with zero
    coefficient is skipped entirely; an empty node set is an error only
    when its coefficient is nonzero.
    """
    labels = np.asarray(labels, dtype=np.int64)

    def branch_term(node_ids):
        node_ids = np.asarray(node_ids, dtype=np.int64)
        rows = ad.gather_rows(tape, z, node_ids)
        logp = ad.log_softmax_rows(tape, rows)
        term = ifl_loss(tape, logp, labels[node_ids], tracker, gamma)
        return ad.mul_scalar(tape, term, 1.0 / node_ids.size)

    terms = []
    for coeff, node_ids, side in ((alpha, y_g, "upper"), (1.0 - alpha, y_de, "lower")):
        if coeff == 0.0:
            continue
        if len(node_ids) == 0:
            raise ValueError(f"{side} branch has an empty node set with coefficient {coeff}")
        terms.append(ad.mul_scalar(tape, branch_term(node_ids), coeff))
    if not terms:
        raise ValueError("both branch coefficients are zero")
    loss = terms[0]
    for extra in terms[1:]:
        loss = ad.add(tape, loss, extra)
    return loss
