"""Contrastive objectives with analytic gradients w.r.t. the query embeddings.

Every loss here is the masked-softmax form

    loss_i = -log( sum_{j in P_i} softmax(logits_i)_j )

averaged over the batch.  InfoNCE is the case where ``P_i`` is column 0
only; the label oracle (UberNCE) and CoCLR differ solely in how the mask is
built.  Keys and queue features are constants: no gradient reaches them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mining import self_only_mask
from .numerics import as_matrix, check_finite
from .queue import QueueState


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LogitsBlock:
    """Temperature-scaled logits; column 0 is the current key, the rest the queue."""

    logits: np.ndarray
    tau: float
    queries: np.ndarray
    keys: np.ndarray
    history: np.ndarray

    @property
    def shape(self):
        return self.logits.shape


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad: np.ndarray
    per_sample: np.ndarray
    grad_logits: np.ndarray | None = None


def build_logits(zq, zk, q: QueueState | np.ndarray | None, tau: float) -> LogitsBlock:
    """``[diag(zq zk^T) | zq queue^T] / tau``.

    ``q`` may be a :class:`QueueState`, a bare ``fill x dim`` matrix or None
    for an empty history.
    """
    if tau <= 0:
        raise LossError(f"temperature must be positive, got {tau}")
    zq = as_matrix(zq, "queries")
    zk = as_matrix(zk, "keys")
    if zq.shape != zk.shape:
        raise LossError(f"queries {zq.shape} and keys {zk.shape} differ in shape")
    if q is None:
        history = np.zeros((0, zq.shape[1]))
    elif isinstance(q, QueueState):
        history = q.entries
    else:
        history = as_matrix(q, "history")
    if history.shape[1] != zq.shape[1]:
        raise LossError(f"history dim {history.shape[1]} does not match embedding dim {zq.shape[1]}")
    l_current = np.sum(zq * zk, axis=1, keepdims=True)
    l_history = zq @ history.T
    logits = np.concatenate([l_current, l_history], axis=1) / tau
    return LogitsBlock(check_finite(logits, "logits"), float(tau), zq, zk, history)


def grad_wrt_queries(block: LogitsBlock, d_logits: np.ndarray) -> np.ndarray:
    """Chain ``dL/dlogits`` back through :func:`build_logits` to the queries."""
    return (d_logits[:, :1] * block.keys + d_logits[:, 1:] @ block.history) / block.tau


def masked_nce(logits, mask) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``-log`` positive softmax mass and its gradient w.r.t. the logits (unscaled)."""
    logits = as_matrix(logits, "logits")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise LossError(f"mask {mask.shape} does not match logits {logits.shape}")
    if not np.all(mask.any(axis=1)):
        raise LossError("every row needs at least one positive")
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    total = e.sum(axis=1, keepdims=True)
    pos = (e * mask).sum(axis=1, keepdims=True)
    per_row = (np.log(total) - np.log(pos))[:, 0]
    d_logits = e / total - mask * e / pos
    return per_row, d_logits


def mil_nce(block: LogitsBlock, mask) -> LossResult:
    """Multi-instance InfoNCE: batch mean of ``-log`` of the positive softmax mass."""
    per_row, d_logits = masked_nce(block.logits, mask)
    n = block.logits.shape[0]
    d_logits = d_logits / n
    return LossResult(float(per_row.mean()), grad_wrt_queries(block, d_logits), per_row, d_logits)


def info_nce(block: LogitsBlock) -> LossResult:
    return mil_nce(block, self_only_mask(*_rows_and_fill(block)))


def _rows_and_fill(block: LogitsBlock) -> tuple[int, int]:
    n, cols = block.logits.shape
    return n, cols - 1


def uber_nce_mask(query_labels, queue_labels) -> np.ndarray:
    """Oracle mask: queue entries sharing the query's class are positives."""
    query_labels = np.asarray(query_labels)
    queue_labels = np.asarray(queue_labels)
    if query_labels.ndim != 1 or queue_labels.ndim != 1:
        raise LossError("label arrays must be 1-D")
    mask = np.ones((len(query_labels), 1 + len(queue_labels)), dtype=bool)
    mask[:, 1:] = query_labels[:, None] == queue_labels[None, :]
    return mask


def cmc_cross_view(z1, z2, q_other: QueueState | np.ndarray | None, tau: float) -> LossResult:
    """Instance-level cross-view contrast.

    The positive for ``z1[i]`` is ``z2[i]``; negatives are the other view's
    queue.  Gradient is w.r.t. ``z1`` only.
    """
    return info_nce(build_logits(z1, z2, q_other, tau))
