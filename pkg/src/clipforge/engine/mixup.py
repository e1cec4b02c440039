"""Clip mixup: a clip collapses to a convex blend of its endpoint frames."""

from __future__ import annotations

import numpy as np

from ..video.data import Frame


def clip_mixup(clip, lam: float):
    """``lam * first + (1 - lam) * last``.

    ``clip`` is either a sequence of :class:`Frame` (returns a Frame) or an array of
    shape ``(N, C, H, W)`` (returns a ``(C, H, W)`` array).  A one-frame clip comes
    back unchanged whatever ``lam`` is.
    """
    if not 0.0 <= lam <= 1.0 or not np.isfinite(lam):
        raise ValueError(f"mixup weight must lie in [0, 1], got {lam}")
    if isinstance(clip, np.ndarray):
        if clip.ndim != 4 or clip.shape[0] < 1:
            raise ValueError(f"clip array must be (N, C, H, W) with N >= 1, got {clip.shape}")
        if clip.shape[0] == 1:
            return clip[0].copy()
        return lam * clip[0] + (1.0 - lam) * clip[-1]
    frames = list(clip)
    if not frames:
        raise ValueError("clip must contain at least one frame")
    if len(frames) == 1:
        return frames[0]
    first, last = frames[0].pixels.astype(np.float64), frames[-1].pixels.astype(np.float64)
    mixed = np.clip(lam * first + (1.0 - lam) * last, 0.0, 1.0)
    return Frame(mixed.astype(frames[0].pixels.dtype))


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) as a ratio of two Gamma(alpha) draws."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    g1 = rng.standard_gamma(alpha)
    g2 = rng.standard_gamma(alpha)
    total = g1 + g2
    if total == 0.0:
        # both draws underflowed; the symmetric limit is the midpoint
        return 0.5
    return float(g1 / total)
