"""Loss terms for the video model: classification, action balance, compute cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.layers import log_softmax, softmax

BALANCE_FORMS = ("abs", "square")


@dataclass(frozen=True)
class LossReport:
    L_c: float
    L_b: float
    L_g: float
    beta: float
    gamma: float

    @property
    def total(self) -> float:
        return total_loss(self.L_c, self.L_b, self.L_g, self.beta, self.gamma)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite([self.L_c, self.L_b, self.L_g, self.total])))


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -log_softmax(logits)[rows, labels].mean()
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def classification_loss(h_final: np.ndarray, labels, classifier):
    """Cross-entropy of ``classifier(h_final)``.

    Returns ``(loss, classifier param grads, d loss / d h_final)``.
    """
    logits, cache = classifier.forward_cached(np.atleast_2d(h_final))
    loss, dlogits = cross_entropy(logits, labels)
    grads, dh = classifier.backward(cache, dlogits)
    return loss, grads, dh


def action_usage(indices, num_actions: int) -> np.ndarray:
    """Fraction of steps that chose each action."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("usage of an empty action trace is undefined")
    return np.bincount(idx, minlength=num_actions)[:num_actions] / idx.size


def balance_loss(usage: np.ndarray, form: str = "abs") -> float:
    return balance_loss_and_grad(usage, form)[0]


def balance_loss_and_grad(usage: np.ndarray, form: str = "abs"):
    """Deviation of action usage from uniform: ``sum_k |u_k - 1/|A||`` (or its square)."""
    usage = np.asarray(usage, dtype=np.float64)
    dev = usage - 1.0 / usage.shape[-1]
    if form == "abs":
        return float(np.abs(dev).sum()), np.sign(dev)
    if form == "square":
        return float((dev * dev).sum()), 2.0 * dev
    raise ValueError(f"balance form must be one of {BALANCE_FORMS}, got {form!r}")


def flops_loss(ledger, normalizer: float) -> float:
    """Mean per-step feature-extraction cost over the cost of one full-resolution step."""
    if normalizer <= 0:
        raise ValueError("FLOPs normalizer must be positive")
    steps = ledger.feature_flops
    if not steps:
        raise ValueError("ledger has no steps")
    return float(np.mean(steps) / normalizer)


def total_loss(l_c: float, l_b: float, l_g: float, beta: float = 0.3, gamma: float = 0.1) -> float:
    return l_c + beta * l_b + gamma * l_g
