"""Dense-tensor layers with hand-written forward/backward passes.

Every layer works on numpy arrays with a leading batch axis.  ``forward_cached``
returns the output plus whatever the backward pass needs; ``backward`` takes that
cache and the upstream gradient and returns ``(param_grads, input_grad)``.

FLOP conventions (one multiply-accumulate = 2 FLOPs):

=================  ==========================================================
conv2d             2 * Kh * Kw * Cin * Cout * Hout * Wout   (bias not counted)
dense              2 * in * out                               (bias not counted)
groupnorm          7 per element (mean 1, variance 2, normalize 2, affine 2)
gru-cell           6 * H * (I + H) for the matmuls + 14 * H elementwise
global-avg-pool    C * H * W (one add per element)
max-pool           Kh * Kw per output element (one compare per window entry)
relu, sigmoid      1 per element
softmax            3 per element (exp, sum, divide)
=================  ==========================================================

All counts are per sample and multiplied by the batch size.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an input does not match what a layer expects."""


def _check_rank(x: np.ndarray, rank: int, kind: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{kind}: expected rank-{rank} input, got shape {x.shape}")


def _check_dim(x: np.ndarray, axis: int, expected: int, kind: str, name: str) -> None:
    if x.shape[axis] != expected:
        raise ShapeError(
            f"{kind}: dimension {axis} ({name}) expected {expected}, got {x.shape[axis]}"
        )


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.result_type(x, np.float64))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


class Layer:
    """Base class.  Subclasses set ``kind`` and fill ``params``/``hparams``."""

    kind = "layer"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.hparams: dict[str, int | float] = {}

    def named_params(self) -> dict[str, np.ndarray]:
        return dict(self.params)

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        return self.forward_cached(x)[0]

    def forward_cached(self, x):
        raise NotImplementedError

    def backward(self, cache, grad):
        raise NotImplementedError

    def flops(self, input_shape) -> int:
        raise NotImplementedError

    def output_shape(self, input_shape):
        return tuple(self.forward(np.zeros(input_shape)).shape)

    def __repr__(self) -> str:
        hp = ", ".join(f"{k}={v}" for k, v in self.hparams.items())
        return f"{type(self).__name__}({hp})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng=None, bias: bool = True):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / math.sqrt(in_features)
        self.params["weight"] = rng.uniform(-bound, bound, (out_features, in_features))
        if bias:
            self.params["bias"] = rng.uniform(-bound, bound, out_features)
        self.hparams.update(in_features=in_features, out_features=out_features)

    def forward_cached(self, x):
        _check_rank(x, 2, self.kind)
        _check_dim(x, 1, self.hparams["in_features"], self.kind, "features")
        y = x @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y, x

    def backward(self, x, grad):
        grads = {"weight": grad.T @ x}
        if "bias" in self.params:
            grads["bias"] = grad.sum(axis=0)
        return grads, grad @ self.params["weight"]

    def flops(self, input_shape) -> int:
        return 2 * input_shape[0] * self.hparams["in_features"] * self.hparams["out_features"]


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        rng=None,
        bias: bool = True,
    ):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = rng.normal(
            0.0, math.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel_size, kernel_size)
        )
        if bias:
            self.params["bias"] = np.zeros(out_channels)
        self.hparams.update(
            in_channels=in_channels,
            out_channels=out_channels,
            kernel_size=kernel_size,
            stride=stride,
            padding=padding,
        )

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.hparams["kernel_size"], self.hparams["stride"], self.hparams["padding"]
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: input {h}x{w} too small for kernel {k} with padding {p}")
        return ho, wo

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        _check_dim(x, 1, self.hparams["in_channels"], self.kind, "channels")
        k, s, p = self.hparams["kernel_size"], self.hparams["stride"], self.hparams["padding"]
        n, c, h, w = x.shape
        ho, wo = self._out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = self.params["weight"].reshape(self.hparams["out_channels"], -1)
        y = cols @ wmat.T
        if "bias" in self.params:
            y = y + self.params["bias"]
        y = y.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)
        return y, (cols, x.shape)

    def backward(self, cache, grad):
        cols, (n, c, h, w) = cache
        k, s, p = self.hparams["kernel_size"], self.hparams["stride"], self.hparams["padding"]
        cout = self.hparams["out_channels"]
        ho, wo = grad.shape[2], grad.shape[3]
        g = grad.transpose(0, 2, 3, 1).reshape(-1, cout)
        wmat = self.params["weight"].reshape(cout, -1)
        grads = {"weight": (g.T @ cols).reshape(self.params["weight"].shape)}
        if "bias" in self.params:
            grads["bias"] = g.sum(axis=0)
        dcols = (g @ wmat).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        dx = dxp[:, :, p : p + h, p : p + w] if p else dxp
        return grads, dx

    def flops(self, input_shape) -> int:
        n, _, h, w = input_shape
        ho, wo = self._out_hw(h, w)
        k = self.hparams["kernel_size"]
        return 2 * n * k * k * self.hparams["in_channels"] * self.hparams["out_channels"] * ho * wo

    def output_shape(self, input_shape):
        n, _, h, w = input_shape
        return (n, self.hparams["out_channels"], *self._out_hw(h, w))


class GroupNorm(Layer):
    """Group normalization over (channels/groups x spatial) per sample."""

    kind = "groupnorm"

    def __init__(self, num_groups: int, num_channels: int, eps: float = 1e-5):
        super().__init__()
        if num_channels % num_groups:
            raise ShapeError(f"groupnorm: {num_channels} channels not divisible by {num_groups} groups")
        self.params["weight"] = np.ones(num_channels)
        self.params["bias"] = np.zeros(num_channels)
        self.hparams.update(num_groups=num_groups, num_channels=num_channels, eps=eps)

    def forward_cached(self, x):
        if x.ndim < 2:
            raise ShapeError(f"groupnorm: expected (N, C, ...) input, got shape {x.shape}")
        _check_dim(x, 1, self.hparams["num_channels"], self.kind, "channels")
        return group_norm_forward(
            x, self.params["weight"], self.params["bias"], self.hparams["num_groups"], self.hparams["eps"]
        )

    def backward(self, cache, grad):
        dx, dw, db = group_norm_backward(cache, grad, self.params["weight"])
        return {"weight": dw, "bias": db}, dx

    def flops(self, input_shape) -> int:
        return 7 * int(np.prod(input_shape))


def group_norm_forward(x, weight, bias, groups, eps):
    n, c = x.shape[:2]
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xg = x.reshape(n, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv_std).reshape(x.shape)
    y = xhat * weight.reshape(bshape) + bias.reshape(bshape)
    return y, (xhat, inv_std, groups)


def group_norm_backward(cache, grad, weight):
    xhat, inv_std, groups = cache
    n, c = xhat.shape[:2]
    bshape = (1, c) + (1,) * (xhat.ndim - 2)
    red = (0,) + tuple(range(2, xhat.ndim))
    dw = (grad * xhat).sum(axis=red)
    db = grad.sum(axis=red)
    dxhat = (grad * weight.reshape(bshape)).reshape(n, groups, -1)
    xh = xhat.reshape(n, groups, -1)
    dx = inv_std * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
    return dx.reshape(xhat.shape), dw, db


class GRUCell(Layer):
    """Single GRU step with update, reset and candidate gates.

    Gate order in the stacked weights is (reset, update, candidate):

        r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h

    ``forward``/``backward`` take and return the pair ``(x, h)``.
    """

    kind = "gru-cell"

    def __init__(self, input_size: int, hidden_size: int, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        b = 1.0 / math.sqrt(hidden_size)
        self.params["w_ih"] = rng.uniform(-b, b, (3 * hidden_size, input_size))
        self.params["w_hh"] = rng.uniform(-b, b, (3 * hidden_size, hidden_size))
        self.params["b_ih"] = rng.uniform(-b, b, 3 * hidden_size)
        self.params["b_hh"] = rng.uniform(-b, b, 3 * hidden_size)
        self.hparams.update(input_size=input_size, hidden_size=hidden_size)

    def forward_cached(self, inputs):
        x, h = inputs
        _check_rank(x, 2, self.kind)
        _check_rank(h, 2, self.kind)
        _check_dim(x, 1, self.hparams["input_size"], self.kind, "input features")
        _check_dim(h, 1, self.hparams["hidden_size"], self.kind, "hidden features")
        if x.shape[0] != h.shape[0]:
            raise ShapeError(f"gru-cell: dimension 0 (batch) differs: {x.shape[0]} vs {h.shape[0]}")
        hs = self.hparams["hidden_size"]
        gi = x @ self.params["w_ih"].T + self.params["b_ih"]
        gh = h @ self.params["w_hh"].T + self.params["b_hh"]
        r = sigmoid(gi[:, :hs] + gh[:, :hs])
        z = sigmoid(gi[:, hs : 2 * hs] + gh[:, hs : 2 * hs])
        hn = gh[:, 2 * hs :]
        n = np.tanh(gi[:, 2 * hs :] + r * hn)
        h_new = (1.0 - z) * n + z * h
        return h_new, (x, h, r, z, n, hn)

    def backward(self, cache, grad):
        x, h, r, z, n, hn = cache
        dn = grad * (1.0 - z)
        dz = grad * (h - n)
        dh = grad * z
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hn
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        grads = {
            "w_ih": dgi.T @ x,
            "w_hh": dgh.T @ h,
            "b_ih": dgi.sum(axis=0),
            "b_hh": dgh.sum(axis=0),
        }
        dx = dgi @ self.params["w_ih"]
        dh = dh + dgh @ self.params["w_hh"]
        return grads, (dx, dh)

    def flops(self, input_shape) -> int:
        # input_shape is the shape of x; the hidden size comes from the layer
        n = input_shape[0]
        i, hs = self.hparams["input_size"], self.hparams["hidden_size"]
        return n * (6 * hs * (i + hs) + 14 * hs)

    def output_shape(self, input_shape):
        return (input_shape[0], self.hparams["hidden_size"])


class GlobalAvgPool(Layer):
    kind = "global-avg-pool"

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, shape, grad):
        return {}, np.broadcast_to(grad[:, :, None, None] / (shape[2] * shape[3]), shape).copy()

    def flops(self, input_shape) -> int:
        return int(np.prod(input_shape))


class MaxPool2d(Layer):
    kind = "max-pool"

    def __init__(self, kernel_size: int, stride: int | None = None):
        super().__init__()
        self.hparams.update(kernel_size=kernel_size, stride=stride or kernel_size)

    def _out_hw(self, h, w):
        k, s = self.hparams["kernel_size"], self.hparams["stride"]
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"max-pool: input {h}x{w} smaller than kernel {k}")
        return ho, wo

    def forward_cached(self, x):
        _check_rank(x, 4, self.kind)
        k, s = self.hparams["kernel_size"], self.hparams["stride"]
        ho, wo = self._out_hw(*x.shape[2:])
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        flat = win.reshape(*win.shape[:4], k * k)
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, cache, grad):
        idx, shape = cache
        k, s = self.hparams["kernel_size"], self.hparams["stride"]
        n, c, ho, wo = grad.shape
        dx = np.zeros(shape)
        di, dj = np.divmod(idx, k)
        rows = np.arange(ho)[None, None, :, None] * s + di
        cols = np.arange(wo)[None, None, None, :] * s + dj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(dx, (nn_, cc, rows, cols), grad)
        return {}, dx

    def flops(self, input_shape) -> int:
        n, c, h, w = input_shape
        ho, wo = self._out_hw(h, w)
        return n * c * ho * wo * self.hparams["kernel_size"] ** 2


class ReLU(Layer):
    kind = "relu"

    def forward_cached(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, grad):
        return {}, grad * mask

    def flops(self, input_shape) -> int:
        return int(np.prod(input_shape))


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward_cached(self, x):
        y = sigmoid(x)
        return y, y

    def backward(self, y, grad):
        return {}, grad * y * (1.0 - y)

    def flops(self, input_shape) -> int:
        return int(np.prod(input_shape))


class Softmax(Layer):
    """Softmax over the last axis."""

    kind = "softmax"

    def forward_cached(self, x):
        y = softmax(x, axis=-1)
        return y, y

    def backward(self, y, grad):
        return {}, y * (grad - np.sum(grad * y, axis=-1, keepdims=True))

    def flops(self, input_shape) -> int:
        return 3 * int(np.prod(input_shape))


class Sequential(Layer):
    """Chain of layers; parameter names are prefixed with the layer position."""

    kind = "sequential"

    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.named_params().items():
                out[f"{i}.{name}"] = arr
        return out

    def forward_cached(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward_cached(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad):
        grads = {}
        for i in reversed(range(len(self.layers))):
            g, grad = self.layers[i].backward(caches[i], grad)
            for name, arr in g.items():
                grads[f"{i}.{name}"] = arr
        return grads, grad

    def flops(self, input_shape) -> int:
        total = 0
        shape = tuple(input_shape)
        for layer in self.layers:
            total += layer.flops(shape)
            shape = layer.output_shape(shape)
        return total

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape


def forward(layer: Layer, x):
    """Pure forward evaluation."""
    return layer.forward(x)


def backward(layer: Layer, x, upstream_grad):
    """Gradients of ``<upstream_grad, layer(x)>`` w.r.t. parameters and input."""
    y, cache = layer.forward_cached(x)
    ys = [y] if not isinstance(y, tuple) else list(y)
    gs = [upstream_grad] if not isinstance(upstream_grad, tuple) else list(upstream_grad)
    for yi, gi in zip(ys, gs):
        if np.shape(yi) != np.shape(gi):
            raise ShapeError(
                f"{layer.kind}: upstream gradient shape {np.shape(gi)} != output shape {np.shape(yi)}"
            )
    return layer.backward(cache, upstream_grad)


def flops(layer: Layer, input_shape) -> int:
    return int(layer.flops(tuple(input_shape)))
