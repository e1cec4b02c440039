"""SGD with momentum and coupled weight decay, global-norm clipping and a milestone learning-rate schedule."""

from __future__ import annotations

import numpy as np


class SGD:
    """``g += wd * p; buf = m * buf + g; p -= lr * buf`` on each named parameter, in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float = 0.937, weight_decay: float = 5e-4):
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            p = self.params[name]
            g = g + self.weight_decay * p if self.weight_decay else g
            buf = self.buffers.get(name)
            buf = g.copy() if buf is None else self.momentum * buf + g
            self.buffers[name] = buf
            if self.lr:
                p -= self.lr * buf


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the norm before clipping.

    ``max_norm <= 0`` leaves the gradients untouched.
    """
    norm = float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def milestone_lr(base: float, epoch: int, milestones, factor: float = 0.1) -> float:
    """``base * factor ** (number of milestones <= epoch)``."""
    return base * factor ** sum(1 for m in milestones if epoch >= m)
