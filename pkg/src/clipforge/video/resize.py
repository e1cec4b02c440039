"""Bilinear resizing with half-pixel centers (align-corners off).

Output pixel ``i`` samples source coordinate ``(i + 0.5) * in / out - 0.5``,
clamped to ``[0, in - 1]``.  There is no antialiasing filter.  Because the
operation is separable and linear it is expressed as ``R_h @ img @ R_w.T``,
which also gives the backward pass for free.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .data import Frame


@lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation matrix; each row sums to 1."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w = src - i0
        m[i, i0] += 1.0 - w
        m[i, i1] += w
    m.setflags(write=False)
    return m


def resize_array(pixels: np.ndarray, target: int) -> np.ndarray:
    """Resize the two trailing axes of ``pixels`` to ``target x target``."""
    if target < 2:
        raise ValueError("resize target must be >= 2")
    h, w = pixels.shape[-2:]
    if h == target and w == target:
        return pixels.copy()
    rh, rw = resize_matrix(h, target), resize_matrix(w, target)
    return rh @ pixels @ rw.T


def resize_backward(grad: np.ndarray, height: int, width: int) -> np.ndarray:
    """Gradient of ``resize_array`` w.r.t. its input."""
    t_h, t_w = grad.shape[-2:]
    if (t_h, t_w) == (height, width):
        return grad.copy()
    return resize_matrix(height, t_h).T @ grad @ resize_matrix(width, t_w)


def resize(frame: Frame, target: int) -> Frame:
    out = resize_array(frame.pixels.astype(np.float64), target)
    return Frame(np.clip(out, 0.0, 1.0).astype(frame.pixels.dtype), frame.label)
