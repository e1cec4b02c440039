"""CBAM, ECA and Shuffle Attention as gradient-checked layers.

All three take ``(N, C, H, W)`` feature maps and return the same shape; every
attention weight is a sigmoid output in (0, 1).  Each layer exposes
``attention_weights(x)`` so callers can inspect the gates.

FLOP conventions follow :mod:`clipforge.numerics.layers`; elementwise gating
multiplies count 1 per element, sigmoid 1 per element, pooling 1 per element.
"""

from __future__ import annotations

import math

import numpy as np

from ..numerics.layers import (
    Conv2d,
    Layer,
    Sequential,
    ShapeError,
    _check_dim,
    _check_rank,
    group_norm_backward,
    group_norm_forward,
    sigmoid,
)


def _max_route(x: np.ndarray, axis, grad: np.ndarray) -> np.ndarray:
    """Route ``grad`` to the first maximal element along ``axis`` (tuple of axes)."""
    axes = axis if isinstance(axis, tuple) else (axis,)
    moved = np.moveaxis(x, axes, tuple(range(x.ndim - len(axes), x.ndim)))
    flat = moved.reshape(*moved.shape[: x.ndim - len(axes)], -1)
    idx = flat.argmax(axis=-1)
    out = np.zeros_like(flat)
    np.put_along_axis(out, idx[..., None], grad.reshape(idx.shape)[..., None], axis=-1)
    out = out.reshape(moved.shape)
    return np.moveaxis(out, tuple(range(x.ndim - len(axes), x.ndim)), axes)


class ChannelAttention(Layer):
    """CBAM channel gate: shared bottleneck MLP over avg- and max-pooled descriptors."""

    kind = "channel-attention"

    def __init__(self, channels: int, reduction: int = 16, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        hidden = max(1, channels // reduction)
        self.params["fc1"] = rng.normal(0.0, math.sqrt(2.0 / channels), (hidden, channels))
        self.params["fc2"] = rng.normal(0.0, math.sqrt(1.0 / hidden), (channels, hidden))
        self.hparams.update(channels=channels, reduction=reduction, hidden=hidden)

    def _gate(self, x):
        avg = x.mean(axis=(2, 3))
        mx = x.max(axis=(2, 3))
        w1, w2 = self.params["fc1"], self.params["fc2"]
        ha, hm = avg @ w1.T, mx @ w1.T
        ra, rm = np.maximum(ha, 0), np.maximum(hm, 0)
        s = sigmoid(ra @ w2.T + rm @ w2.T)
        return s, (avg, mx, ha, hm, ra, rm)

    def attention_weights(self, x):
        return self._gate(x)[0]

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        _check_dim(x, 1, self.hparams["channels"], self.kind, "channels")
        s, inner = self._gate(x)
        return x * s[:, :, None, None], (x, s, inner)

    def backward(self, cache, grad):
        x, s, (avg, mx, ha, hm, ra, rm) = cache
        w1, w2 = self.params["fc1"], self.params["fc2"]
        ds = (grad * x).sum(axis=(2, 3))
        dpre = ds * s * (1.0 - s)
        g_w2 = dpre.T @ ra + dpre.T @ rm
        dra, drm = dpre @ w2, dpre @ w2
        dha, dhm = dra * (ha > 0), drm * (hm > 0)
        g_w1 = dha.T @ avg + dhm.T @ mx
        davg, dmx = dha @ w1, dhm @ w1
        hw = x.shape[2] * x.shape[3]
        dx = grad * s[:, :, None, None] + davg[:, :, None, None] / hw
        dx = dx + _max_route(x, (2, 3), dmx)
        return {"fc1": g_w1, "fc2": g_w2}, dx

    def flops(self, input_shape) -> int:
        n, c, h, w = input_shape
        hid = self.hparams["hidden"]
        pools = 2 * c * h * w
        mlp = 2 * (2 * c * hid + hid + 2 * hid * c)
        return n * (pools + mlp + 2 * c + c * h * w)


class SpatialAttention(Layer):
    """CBAM spatial gate: conv over channel-wise avg and max maps."""

    kind = "spatial-attention"

    def __init__(self, kernel_size: int = 7, rng=None):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeError("spatial-attention: kernel size must be odd")
        self.conv = Conv2d(2, 1, kernel_size, padding=kernel_size // 2, rng=rng, bias=False)
        self.params = self.conv.params
        self.hparams.update(kernel_size=kernel_size)

    def _gate(self, x):
        desc = np.concatenate([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
        pre, ccache = self.conv.forward_cached(desc)
        return sigmoid(pre), ccache

    def attention_weights(self, x):
        return self._gate(x)[0]

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        s, ccache = self._gate(x)
        return x * s, (x, s, ccache)

    def backward(self, cache, grad):
        x, s, ccache = cache
        ds = (grad * x).sum(axis=1, keepdims=True)
        grads, ddesc = self.conv.backward(ccache, ds * s * (1.0 - s))
        c = x.shape[1]
        dx = grad * s + ddesc[:, :1] / c
        dx = dx + _max_route(x, 1, ddesc[:, 1])
        return grads, dx

    def flops(self, input_shape) -> int:
        n, c, h, w = input_shape
        return 2 * n * c * h * w + self.conv.flops((n, 2, h, w)) + 2 * n * h * w + n * c * h * w


class CBAM(Sequential):
    """Channel attention followed by spatial attention."""

    kind = "cbam"

    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7, rng=None):
        super().__init__(ChannelAttention(channels, reduction, rng), SpatialAttention(kernel_size, rng))
        self.hparams.update(channels=channels, reduction=reduction, kernel_size=kernel_size)

    def attention_weights(self, x):
        ca, sa = self.layers
        return ca.attention_weights(x), sa.attention_weights(ca.forward(x))


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Adaptive ECA kernel size: nearest odd value of |log2(C)/gamma + b/gamma|."""
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    return t if t % 2 else t + 1


class ECA(Layer):
    """Efficient channel attention: 1D conv across the pooled channel vector.

    The channel vector is zero-padded (no wrap-around) so the output keeps C entries.
    """

    kind = "eca"

    def __init__(self, channels: int, kernel_size: int = 3, rng=None):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeError("eca: kernel size must be odd")
        rng = np.random.default_rng(0) if rng is None else rng
        self.params["weight"] = rng.uniform(-1.0, 1.0, kernel_size) / math.sqrt(kernel_size)
        self.params["bias"] = np.zeros(1)
        self.hparams.update(channels=channels, kernel_size=kernel_size)

    def _gate(self, x):
        k = self.hparams["kernel_size"]
        pooled = x.mean(axis=(2, 3))
        padded = np.pad(pooled, ((0, 0), (k // 2, k // 2)))
        win = np.lib.stride_tricks.sliding_window_view(padded, k, axis=1)
        pre = win @ self.params["weight"] + self.params["bias"][0]
        return sigmoid(pre), win

    def attention_weights(self, x):
        return self._gate(x)[0]

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        _check_dim(x, 1, self.hparams["channels"], self.kind, "channels")
        s, win = self._gate(x)
        return x * s[:, :, None, None], (x, s, win)

    def backward(self, cache, grad):
        x, s, win = cache
        k = self.hparams["kernel_size"]
        n, c, h, w = x.shape
        dpre = (grad * x).sum(axis=(2, 3)) * s * (1.0 - s)
        g_w = np.einsum("nc,nck->k", dpre, win)
        g_b = np.array([dpre.sum()])
        dpadded = np.zeros((n, c + k - 1))
        for i in range(k):
            dpadded[:, i : i + c] += dpre * self.params["weight"][i]
        dpooled = dpadded[:, k // 2 : k // 2 + c]
        dx = grad * s[:, :, None, None] + dpooled[:, :, None, None] / (h * w)
        return {"weight": g_w, "bias": g_b}, dx

    def flops(self, input_shape) -> int:
        n, c, h, w = input_shape
        k = self.hparams["kernel_size"]
        return n * (c * h * w + 2 * k * c + c + c * h * w)


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Index map of channel shuffle: output channel i reads input ``perm[i]``."""
    if channels % groups:
        raise ShapeError(f"channel shuffle: {channels} channels not divisible by {groups} groups")
    return np.arange(channels).reshape(groups, channels // groups).T.reshape(-1)


def channel_shuffle(x: np.ndarray, groups: int) -> np.ndarray:
    return x[:, shuffle_permutation(x.shape[1], groups)]


class ShuffleAttention(Layer):
    """Shuffle Attention (SA-Net layout).

    Channels are split into ``groups``; each group is halved.  One half is gated by
    its pooled mean (``cweight * mean + cbias``), the other by its per-channel
    normalized map (``sweight * GN(x) + sbias``).  Halves are concatenated and the
    channels shuffled with two groups.
    """

    kind = "shuffle-attention"

    def __init__(self, channels: int, groups: int = 8, eps: float = 1e-5, rng=None):
        super().__init__()
        if channels % (2 * groups):
            raise ShapeError(
                f"shuffle-attention: {channels} channels not divisible by 2 * {groups} groups"
            )
        half = channels // (2 * groups)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params["cweight"] = np.zeros(half)
        self.params["cbias"] = np.ones(half)
        self.params["sweight"] = np.zeros(half)
        self.params["sbias"] = np.ones(half)
        self.params["gn_weight"] = np.ones(half)
        self.params["gn_bias"] = np.zeros(half)
        self.hparams.update(channels=channels, groups=groups, eps=eps)

    def _split(self, x):
        n, c, h, w = x.shape
        g = self.hparams["groups"]
        xg = x.reshape(n * g, c // g, h, w)
        half = c // (2 * g)
        return xg[:, :half], xg[:, half:]

    def _gates(self, x):
        p = self.params
        x0, x1 = self._split(x)
        b = (1, -1, 1, 1)
        pooled = x0.mean(axis=(2, 3), keepdims=True)
        sc = sigmoid(p["cweight"].reshape(b) * pooled + p["cbias"].reshape(b))
        xn, gcache = group_norm_forward(x1, p["gn_weight"], p["gn_bias"], x1.shape[1], self.hparams["eps"])
        ss = sigmoid(p["sweight"].reshape(b) * xn + p["sbias"].reshape(b))
        return (x0, x1, pooled, sc, xn, gcache, ss)

    def attention_weights(self, x):
        parts = self._gates(x)
        return parts[3], parts[6]

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        _check_dim(x, 1, self.hparams["channels"], self.kind, "channels")
        parts = self._gates(x)
        x0, x1, _, sc, _, _, ss = parts
        out = np.concatenate([x0 * sc, x1 * ss], axis=1).reshape(x.shape)
        return channel_shuffle(out, 2), (x.shape, parts)

    def backward(self, cache, grad):
        shape, (x0, x1, pooled, sc, xn, gcache, ss) = cache
        p = self.params
        n, c, h, w = shape
        g = self.hparams["groups"]
        half = x0.shape[1]
        b = (1, -1, 1, 1)
        dout = np.empty_like(grad)
        dout[:, shuffle_permutation(c, 2)] = grad
        dout = dout.reshape(n * g, c // g, h, w)
        d0, d1 = dout[:, :half], dout[:, half:]

        dpre_c = (d0 * x0).sum(axis=(2, 3), keepdims=True) * sc * (1.0 - sc)
        g_cw = (dpre_c * pooled).sum(axis=(0, 2, 3))
        g_cb = dpre_c.sum(axis=(0, 2, 3))
        dx0 = d0 * sc + (dpre_c * p["cweight"].reshape(b)) / (h * w)

        dpre_s = d1 * x1 * ss * (1.0 - ss)
        g_sw = (dpre_s * xn).sum(axis=(0, 2, 3))
        g_sb = dpre_s.sum(axis=(0, 2, 3))
        dxn_in, g_gw, g_gb = group_norm_backward(gcache, dpre_s * p["sweight"].reshape(b), p["gn_weight"])
        dx1 = d1 * ss + dxn_in

        dx = np.concatenate([dx0, dx1], axis=1).reshape(shape)
        grads = {
            "cweight": g_cw,
            "cbias": g_cb,
            "sweight": g_sw,
            "sbias": g_sb,
            "gn_weight": g_gw,
            "gn_bias": g_gb,
        }
        return grads, dx

    def flops(self, input_shape) -> int:
        n, c, h, w = input_shape
        half_elems = c * h * w // 2
        channel_branch = half_elems + 3 * (c // 2) + half_elems
        spatial_branch = 7 * half_elems + 3 * half_elems + half_elems
        return n * (channel_branch + spatial_branch)


def make_attention(kind: str, channels: int, rng=None, reduction: int = 16, eca_kernel: int = 3, groups: int = 8):
    """Build an attention layer from an ``AttentionConfig``-style description."""
    if kind == "cbam":
        return CBAM(channels, reduction, rng=rng)
    if kind == "eca":
        return ECA(channels, eca_kernel, rng=rng)
    if kind == "shuffle":
        return ShuffleAttention(channels, groups, rng=rng)
    raise ValueError(f"unknown attention kind {kind!r}")
