"""Feature extractor (CNN + GRU), classifier heads and the policy, bundled as an Engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..detection.attention import make_attention
from ..numerics.layers import (
    Conv2d,
    Dense,
    GlobalAvgPool,
    GroupNorm,
    GRUCell,
    Layer,
    ReLU,
    Sequential,
    ShapeError,
)
from ..policy import ActionSpace, PolicyNetwork
from ..video.resize import resize_array, resize_backward

PREFIXES = ("cnn", "gru", "fc", "head", "policy")


class Center(Layer):
    """``x - 0.5``: moves [0, 1] pixels to a zero-centred range.  One FLOP per element."""

    kind = "center"

    def forward_cached(self, x):
        return x - 0.5, None

    def backward(self, cache, grad):
        return {}, grad

    def flops(self, input_shape) -> int:
        return int(np.prod(input_shape))


class FrameCNN(Sequential):
    """Centring, stride-2 3x3 conv blocks (conv, optional GroupNorm, ReLU, optional
    attention), then global average pooling.  ``norm_groups=0`` drops the GroupNorm."""

    def __init__(
        self,
        in_channels: int,
        widths=(8, 16, 32),
        attention: str = "none",
        rng=None,
        norm_groups: int = 4,
        **attn_kw,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        layers: list[Layer] = [Center()]
        c = in_channels
        for w in widths:
            layers.append(Conv2d(c, w, 3, stride=2, padding=1, rng=rng))
            if norm_groups:
                layers.append(GroupNorm(min(norm_groups, w), w))
            layers.append(ReLU())
            if attention != "none":
                layers.append(make_attention(attention, w, rng=rng, **attn_kw))
            c = w
        layers.append(GlobalAvgPool())
        super().__init__(*layers)
        self.in_channels = in_channels
        self.feature_size = c

    def features(self, pixels: np.ndarray, resolution: int) -> np.ndarray:
        """``(N, C, H, W)`` frames resized to ``resolution`` -> ``(N, F)`` features."""
        return self.forward(resize_array(np.asarray(pixels, dtype=np.float64), resolution))


class FeatureStep(Layer):
    """One step of the feature extractor: resize, CNN, GRU.  Input and output ``(x, h)``."""

    kind = "feature-step"

    def __init__(self, cnn: FrameCNN, gru: GRUCell, resolution: int):
        super().__init__()
        self.cnn, self.gru, self.resolution = cnn, gru, resolution

    def named_params(self):
        out = {f"cnn.{k}": v for k, v in self.cnn.named_params().items()}
        out.update({f"gru.{k}": v for k, v in self.gru.named_params().items()})
        return out

    def forward_cached(self, inputs):
        x, h = inputs
        xr = resize_array(x, self.resolution)
        feat, ccache = self.cnn.forward_cached(xr)
        h_new, gcache = self.gru.forward_cached((feat, h))
        return h_new, (x.shape, ccache, gcache)

    def backward(self, cache, grad):
        shape, ccache, gcache = cache
        ggru, (dfeat, dh) = self.gru.backward(gcache, grad)
        gcnn, dxr = self.cnn.backward(ccache, dfeat)
        grads = {f"cnn.{k}": v for k, v in gcnn.items()}
        grads.update({f"gru.{k}": v for k, v in ggru.items()})
        return grads, (resize_backward(dxr, shape[-2], shape[-1]), dh)

    def flops(self, input_shape) -> int:
        n, c = input_shape[:2]
        return self.cnn.flops((n, c, self.resolution, self.resolution)) + self.gru.flops((n, self.cnn.feature_size))

    def output_shape(self, input_shape):
        return (input_shape[0], self.gru.hparams["hidden_size"])


@dataclass(frozen=True)
class EngineConfig:
    channels: int = 3
    cnn_widths: tuple[int, ...] = (8, 16, 32)
    cnn_norm_groups: int = 4
    hidden_size: int = 64
    num_classes: int = 2
    attention: str = "none"
    action_space: ActionSpace = field(default_factory=ActionSpace)
    station_count: int = 2
    alpha: float = 0.3
    policy_groups: int = 8
    seed: int = 0


class Engine:
    """All trainable pieces: ``cnn`` and ``gru`` form f_s, ``fc`` is the video classifier,
    ``head`` the per-frame classifier used to pretrain the CNN, ``policy`` is pi."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config = config or EngineConfig()
        rng = np.random.default_rng([config.seed, 0])
        self.cnn = FrameCNN(config.channels, config.cnn_widths, config.attention, rng=rng, norm_groups=config.cnn_norm_groups)
        f = self.cnn.feature_size
        self.gru = GRUCell(f, config.hidden_size, rng=rng)
        self.fc = Dense(config.hidden_size, config.num_classes, rng=rng)
        self.head = Dense(f, config.num_classes, rng=rng)
        self.policy = PolicyNetwork(
            config.hidden_size, f, len(config.action_space), groups=config.policy_groups, rng=rng
        )

    @property
    def action_space(self) -> ActionSpace:
        return self.config.action_space

    @property
    def feature_size(self) -> int:
        return self.cnn.feature_size

    @property
    def hidden_size(self) -> int:
        return self.config.hidden_size

    @property
    def full_resolution(self) -> int:
        return self.action_space.full_resolution

    def features(self, pixels: np.ndarray, resolution: int) -> np.ndarray:
        return self.cnn.features(pixels, resolution)

    def feature_step(self, resolution: int) -> FeatureStep:
        return FeatureStep(self.cnn, self.gru, resolution)

    def cnn_flops(self, resolution: int) -> int:
        return self.cnn.flops((1, self.config.channels, resolution, resolution))

    def gru_flops(self) -> int:
        return self.gru.flops((1, self.feature_size))

    def step_flops(self, resolution: int) -> int:
        return self.cnn_flops(resolution) + self.gru_flops()

    def policy_flops(self) -> int:
        return self.policy.flops()

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix in PREFIXES:
            part = getattr(self, prefix)
            out.update({f"{prefix}.{k}": v for k, v in part.named_params().items()})
        return out

    def load_params(self, params: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy ``params`` into the engine in place; shapes must match."""
        own = self.named_params()
        if strict:
            missing = sorted(set(own) - set(params))
            if missing:
                raise KeyError(f"checkpoint lacks parameters: {', '.join(missing[:5])}")
        unknown = sorted(set(params) - set(own))
        if unknown:
            raise KeyError(f"checkpoint has unknown parameters: {', '.join(unknown[:5])}")
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {own[name].shape}")
            own[name][...] = value


def step_features(mixed: np.ndarray, resolution: int, engine: Engine, h_prev: np.ndarray):
    """Advance the hidden state by one mixed frame ``(C, H, W)``.

    Returns ``(h, flops)`` where ``flops`` is the CNN cost at ``resolution`` plus the GRU cost.
    """
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_prev.shape != (engine.hidden_size,):
        raise ShapeError(f"hidden state has shape {h_prev.shape}, expected ({engine.hidden_size},)")
    feat = engine.features(np.asarray(mixed, dtype=np.float64)[None], resolution)
    h = engine.gru.forward((feat, h_prev[None]))[0]
    return h, engine.step_flops(resolution)
