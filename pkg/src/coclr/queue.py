"""Fixed-capacity FIFO queues of normalised key features.

Entries are kept oldest first, so column ``j`` of any similarity matrix
against the queue refers to the ``j``-th oldest stored key.  In co-training
the two view queues are pushed in lockstep with the same sample ids, so row
``j`` of one queue and row ``j`` of the other describe the same sample.

A sample that was enqueued on an earlier pass stays in the queue and acts
as a negative (or a mined positive) for its own later queries; no id-based
exclusion is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix


class QueueError(ValueError):
    pass


class EmptyQueueError(QueueError):
    pass


@dataclass(frozen=True)
class QueueState:
    capacity: int
    dim: int
    entries: np.ndarray = None
    ids: tuple = ()
    ages: np.ndarray = None
    pushed: int = 0

    def __post_init__(self):
        if self.capacity <= 0 or self.dim <= 0:
            raise QueueError("capacity and dim must be positive")
        if self.entries is None:
            object.__setattr__(self, "entries", np.zeros((0, self.dim)))
        if self.ages is None:
            object.__setattr__(self, "ages", np.zeros(0, dtype=np.int64))

    @property
    def fill(self) -> int:
        return self.entries.shape[0]

    def equals(self, other: "QueueState") -> bool:
        return (self.capacity == other.capacity and self.dim == other.dim and self.ids == other.ids
                and np.array_equal(self.entries, other.entries) and np.array_equal(self.ages, other.ages)
                and self.pushed == other.pushed)


def empty_queue(capacity: int, dim: int) -> QueueState:
    return QueueState(int(capacity), int(dim))


def push_batch(q: QueueState, keys, ids=None, step: int | None = None, unit_tol: float = 1e-10) -> QueueState:
    """Enqueue a batch, evicting exactly the oldest rows on overflow."""
    keys = as_matrix(keys, "keys")
    n = keys.shape[0]
    if n == 0:
        return q
    if keys.shape[1] != q.dim:
        raise QueueError(f"key dim {keys.shape[1]} does not match queue dim {q.dim}")
    if n > q.capacity:
        raise QueueError(f"batch of {n} exceeds queue capacity {q.capacity}")
    norms = np.sqrt(np.sum(keys * keys, axis=1))
    if np.any((np.abs(norms - 1.0) > unit_tol) & (norms > 0.0)):
        raise QueueError("queue entries must be unit-norm rows")
    ids = tuple(range(q.pushed, q.pushed + n)) if ids is None else tuple(ids)
    if len(ids) != n:
        raise QueueError(f"{len(ids)} ids for {n} keys")
    stamp = q.pushed if step is None else step
    keep = q.capacity - n
    entries = np.concatenate([q.entries[max(q.fill - keep, 0):], keys])
    ages = np.concatenate([q.ages[max(q.fill - keep, 0):], np.full(n, stamp, dtype=np.int64)])
    kept_ids = q.ids[max(q.fill - keep, 0):] + ids
    return QueueState(q.capacity, q.dim, entries, kept_ids, ages, q.pushed + n)


def similarity_to_queue(z, q: QueueState) -> np.ndarray:
    z = as_matrix(z, "queries")
    if z.shape[1] != q.dim:
        raise QueueError(f"query dim {z.shape[1]} does not match queue dim {q.dim}")
    if q.fill == 0:
        raise EmptyQueueError("queue is empty")
    return z @ q.entries.T


def contents(q: QueueState) -> list:
    """Stored ids, oldest first."""
    return list(q.ids)
