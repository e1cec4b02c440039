"""Binary cross-entropy and distribution focal loss, each with its analytic gradient."""

from __future__ import annotations

import numpy as np

from ..numerics.layers import log_softmax, softmax

EPS = 1e-12


def bce_loss(x, y, w=1.0) -> float:
    return bce_loss_and_grad(x, y, w)[0]


def bce_loss_and_grad(x, y, w=1.0):
    """Mean of ``-w [y log x + (1 - y) log(1 - x)]`` with ``x`` clamped to ``[EPS, 1 - EPS]``.

    Returns ``(loss, d loss / d x)``; the gradient is zero where the clamp is active.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), x.shape)
    xc = np.clip(x, EPS, 1.0 - EPS)
    per = -w * (y * np.log(xc) + (1.0 - y) * np.log1p(-xc))
    inside = (x > EPS) & (x < 1.0 - EPS)
    grad = np.where(inside, -w * (y / xc - (1.0 - y) / (1.0 - xc)), 0.0) / max(x.size, 1)
    return float(per.mean()), grad


def _interp_weights(y, y_left, y_right):
    if not y_right > y_left:
        raise ValueError(f"bins must satisfy y_left < y_right, got {y_left}, {y_right}")
    if not y_left <= y <= y_right:
        raise ValueError(f"target {y} outside its bins [{y_left}, {y_right}]")
    width = y_right - y_left
    return (y_right - y) / width, (y - y_left) / width


def dfl_loss(s_left: float, s_right: float, y: float, y_left: float, y_right: float) -> float:
    return dfl_loss_and_grad(s_left, s_right, y, y_left, y_right)[0]


def dfl_loss_and_grad(s_left, s_right, y, y_left, y_right):
    """Distribution focal loss for one target between two adjacent bins.

        -[(y_right - y) log S_left + (y - y_left) log S_right] / (y_right - y_left)

    The usual unit-width form, written so non-unit bin spacing keeps the weights a
    convex pair.  Returns ``(loss, (d/dS_left, d/dS_right))``.
    """
    wl, wr = _interp_weights(y, y_left, y_right)
    if not (0.0 < s_left <= 1.0 and 0.0 < s_right <= 1.0):
        raise ValueError("bin probabilities must lie in (0, 1]")
    loss = -(wl * np.log(s_left) + wr * np.log(s_right))
    return float(loss), np.array([-wl / s_left, -wr / s_right])


def dfl_loss_logits(logits, targets):
    """Batch DFL over integer-spaced bins ``0 .. B-1`` with a softmax over each row.

    Returns ``(mean loss, d loss / d logits)``.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    n, bins = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"need one target per row, got {targets.shape} for {n} rows")
    if np.any(targets < 0) or np.any(targets > bins - 1):
        raise ValueError(f"targets must lie in [0, {bins - 1}]")
    left = np.minimum(np.floor(targets).astype(int), bins - 2)
    wl = left + 1 - targets
    wr = targets - left
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -(wl * logp[rows, left] + wr * logp[rows, left + 1])
    onehot = np.zeros_like(logits)
    onehot[rows, left] = wl
    onehot[rows, left + 1] += wr
    # each row's target weights sum to 1, so d/dlogits = softmax - weights
    grad = (softmax(logits) - onehot) / n
    return float(loss.mean()), grad
