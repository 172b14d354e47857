from __future__ import annotations

import math

import numpy as np


def sgd_step(state, grads, lr, momentum=0.95, weight_decay=1e-4, nesterov=True):
    """One in-place SGD step with weight decay and (Nesterov) momentum.

    g <- g + wd*p;  v <- mu*v + g;  p <- p - lr*(g + mu*v)  (or p - lr*v without Nesterov).
    ``grads`` maps theta names to arrays; a missing or None entry counts as zero.
    """
    for name, param in state.theta.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        elif g.shape != param.data.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {param.data.shape}")
        g = g + weight_decay * param.data
        v = state.velocity[name]
        v[...] = momentum * v + g
        if nesterov:
            param.data -= lr * (g + momentum * v)
        else:
            param.data -= lr * v
    return state


def ema_update(state, m):
    """theta_hat <- m*theta_hat + (1-m)*theta for the momentum encoder and instance head."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"EMA coefficient must be in [0, 1], got {m}")
    theta = state.theta
    for name, hat in state.theta_hat.items():
        hat.data[...] = m * hat.data + (1 - m) * theta[name].data
    return state


def cosine_lr(t, total, lr0):
    if total <= 0:
        raise ValueError(f"total iterations must be positive, got {total}")
    if not 0 <= t <= total:
        raise ValueError(f"iteration {t} outside [0, {total}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))
