"""Stabilized activations and losses, as plain-array helpers and tape ops."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, _make, as_tensor

NORM_EPS = 1e-12


def softmax(logits, mask=None, axis=-1) -> np.ndarray:
    z = np.asarray(logits)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    if z.shape[axis] == 0:
        raise ValueError("softmax of a zero-length vector")
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, mask=None, axis=-1) -> np.ndarray:
    z = np.asarray(logits)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sigmoid(x):
    x = np.asarray(x)
    # split by sign so exp never overflows
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))


def l2_normalize(v, axis=-1) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[axis] == 0:
        raise ValueError("cannot normalize a zero-length vector")
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm < NORM_EPS):
        raise ValueError("cannot normalize a vector with norm < 1e-12")
    return v / norm


def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood of integer labels under row probabilities."""
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels).reshape(-1)
    return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))


def bce(p, y) -> float:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def bce_from_logits(z, y) -> np.ndarray:
    """Per-element BCE computed from logits: log(1+e^z) - y*z."""
    z = np.asarray(z)
    return np.logaddexp(0, z) - y * z


# ---- tape ops ----------------------------------------------------------------

def normalize_rows(x) -> Tensor:
    x = as_tensor(x)
    norm = np.linalg.norm(x.data, axis=1, keepdims=True)
    if np.any(norm < NORM_EPS):
        raise ValueError("cannot normalize a vector with norm < 1e-12")
    y = x.data / norm

    def bw(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norm,)

    return _make(y, (x,), bw)


def cross_entropy_loss(logits, labels, mask=None) -> Tensor:
    """Batch-mean softmax cross-entropy over (N, C) logits.

    Classes where ``mask`` is False get probability exactly 0 and no gradient.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = logits.shape[0]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask[np.arange(n), labels]):
            raise ValueError("label is not in the availability mask")
    logp = log_softmax(logits.data, mask, axis=1)
    loss = -np.mean(logp[np.arange(n), labels])

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def bce_with_logits_loss(logits, targets) -> Tensor:
    """Batch-mean binary cross-entropy of (N, 1) or (N,) logits."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=logits.dtype).reshape(logits.shape)
    n = y.size
    loss = np.mean(bce_from_logits(logits.data, y))

    def bw(g):
        return ((sigmoid(logits.data) - y) * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def mse_loss(pred, targets) -> Tensor:
    pred = as_tensor(pred)
    y = np.asarray(targets, dtype=pred.dtype).reshape(pred.shape)
    diff = pred.data - y

    def bw(g):
        return (2.0 * diff * (g / diff.size),)

    return _make(np.asarray(np.mean(diff * diff), dtype=pred.dtype), (pred,), bw)
