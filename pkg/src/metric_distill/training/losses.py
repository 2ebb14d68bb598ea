"""Ranking losses with analytic gradients with respect to the input scores."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..metrics import QualityOrdering


def logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def contrastive_loss(pos_sim: float, neg_sims: Sequence[float]) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of the positive against its negatives.

    Returns the loss and its gradient w.r.t. ``[pos_sim, *neg_sims]``.
    """
    logits = np.concatenate([[pos_sim], np.asarray(neg_sims, dtype=float)])
    if len(logits) == 1:
        return 0.0, np.zeros(1)
    loss = logsumexp(logits) - logits[0]
    grad = softmax(logits)
    grad[0] -= 1.0
    return max(loss, 0.0), grad


def _order_of(ordering: QualityOrdering | Sequence[int]) -> np.ndarray:
    if isinstance(ordering, QualityOrdering):
        return np.asarray(ordering.order, dtype=np.int64)
    return np.asarray(ordering, dtype=np.int64)


def list_mle_loss(z: Sequence[float], ordering: QualityOrdering | Sequence[int]) -> tuple[float, np.ndarray]:
    """Plackett-Luce negative log-likelihood of ``ordering`` under scores ``z``.

    ``ordering`` lists candidate indices from best to worst. Each partial
    sum over the remaining items is evaluated with its own max shift.
    """
    z = np.asarray(z, dtype=float)
    order = _order_of(ordering)
    if len(z) != len(order):
        raise ValueError(f"length mismatch: {len(z)} scores vs {len(order)} ordered items")
    if len(z) == 0:
        raise ValueError("empty score vector")
    zs = z[order]
    n = len(zs)
    # suffix log-sum-exp: lse[k] = log sum_{i>=k} exp(zs[i])
    lse = np.empty(n)
    acc = -np.inf
    for k in range(n - 1, -1, -1):
        acc = np.logaddexp(acc, zs[k])
        lse[k] = acc
    loss = float(np.sum(lse - zs))
    # d/d zs[i] = sum_{k<=i} exp(zs[i] - lse[k]) - 1
    probs = np.exp(zs[None, :] - lse[:, None])
    grad_sorted = np.tril(probs.T).sum(axis=1) - 1.0
    grad = np.empty(n)
    grad[order] = grad_sorted
    return max(loss, 0.0), grad


def kl_distill_loss(teacher: Sequence[float], student: Sequence[float]) -> tuple[float, np.ndarray]:
    """KL(softmax(teacher) || softmax(student)); gradient w.r.t. the student only."""
    t = np.asarray(teacher, dtype=float)
    s = np.asarray(student, dtype=float)
    if t.shape != s.shape:
        raise ValueError(f"length mismatch: {len(t)} teacher vs {len(s)} student scores")
    if len(t) == 0:
        raise ValueError("empty score vector")
    log_p = t - logsumexp(t)
    log_q = s - logsumexp(s)
    p = np.exp(log_p)
    loss = float(np.sum(p * (log_p - log_q)))
    return max(loss, 0.0), np.exp(log_q) - p
