"""The three auxiliary losses and the negative-key memory bank."""
from __future__ import annotations

import warnings

import numpy as np

from .nncore.functional import bce_with_logits_loss, cross_entropy_loss, sigmoid
from .nncore.tensor import Tensor, concat, matmul, mul, rowdot


class MemoryBank:
    """Fixed-capacity FIFO ring of unit-norm key projections."""

    def __init__(self, capacity=1024, dim=32, dtype=np.float32):
        if capacity <= 0 or dim <= 0:
            raise ValueError("memory bank capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self.entries = np.zeros((capacity, dim), dtype=dtype)
        self.cursor = 0
        self.filled = 0

    def __len__(self):
        return self.filled

    def negatives(self) -> np.ndarray:
        return self.entries[:self.filled]

    def enqueue(self, keys):
        keys = np.asarray(keys, dtype=self.entries.dtype)
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise ValueError(f"keys must have shape (n, {self.dim}), got {keys.shape}")
        keys = keys / np.linalg.norm(keys, axis=1, keepdims=True)
        # only the newest `capacity` keys survive a single oversized batch
        keys = keys[-self.capacity:]
        idx = (self.cursor + np.arange(len(keys))) % self.capacity
        self.entries[idx] = keys
        self.cursor = int((self.cursor + len(keys)) % self.capacity)
        self.filled = min(self.capacity, self.filled + len(keys))
        return self

    def state_dict(self):
        return {"capacity": self.capacity, "dim": self.dim, "cursor": self.cursor, "filled": self.filled}


def enqueue(bank: MemoryBank, keys) -> MemoryBank:
    return bank.enqueue(keys)


def jigsaw_loss(head, f_a, f_q, labels, mask=None):
    """Masked 27-way cross-entropy on the concatenated anchor/query features.

    ``labels`` are 1-based jigsaw labels; ``mask`` is (N, 27) availability.
    Returns (loss tensor, logits array).
    """
    labels = np.asarray(labels).reshape(-1)
    logits = head(concat([f_a, f_q], axis=1))
    loss = cross_entropy_loss(logits, labels - 1, mask)
    return loss, logits.data


def traversability_loss(head, f, y):
    logits = head(f)
    loss = bce_with_logits_loss(logits, np.asarray(y, dtype=float).reshape(-1, 1))
    return loss, sigmoid(logits.data).reshape(-1)


def instance_logits(q, k_pos, negatives, tau):
    """Logits [q.k+, q.m_1, ..., q.m_K] / tau, with the positive at index 0."""
    k_pos = np.asarray(k_pos, dtype=q.dtype)
    pos = rowdot(q, Tensor(k_pos))
    if len(negatives):
        neg = matmul(q, Tensor(np.asarray(negatives, dtype=q.dtype).T))
        logits = concat([pos, neg], axis=1)
    else:
        logits = pos
    return mul(logits, 1.0 / tau)


def instance_loss(q, k_pos, bank: MemoryBank, tau=0.07):
    """InfoNCE over the positive key and the filled bank entries.

    ``q`` is the online, L2-normalized projection (a tape tensor); ``k_pos``
    and the bank are constants, so no gradient reaches them.
    """
    negatives = bank.negatives()
    if len(negatives) == 0:
        warnings.warn("instance loss with an empty memory bank is identically zero", RuntimeWarning)
    logits = instance_logits(q, k_pos, negatives, tau)
    loss = cross_entropy_loss(logits, np.zeros(q.shape[0], dtype=np.int64))
    return loss, logits.data
