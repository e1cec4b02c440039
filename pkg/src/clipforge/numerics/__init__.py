"""Small numpy tensor core: layers with analytic gradients, FLOP counts, gradcheck."""

from .checkpoint import CheckpointError, load_params, save_params
from .gradcheck import (
    GradcheckReport,
    NonFiniteLossError,
    gradcheck,
    numeric_grad,
    relative_error,
)
from .layers import (
    Conv2d,
    Dense,
    GlobalAvgPool,
    GroupNorm,
    GRUCell,
    Layer,
    MaxPool2d,
    ReLU,
    Sequential,
    ShapeError,
    Sigmoid,
    Softmax,
    backward,
    flops,
    forward,
    log_softmax,
    sigmoid,
    softmax,
)

__all__ = [
    "CheckpointError",
    "Conv2d",
    "Dense",
    "GlobalAvgPool",
    "GradcheckReport",
    "GroupNorm",
    "GRUCell",
    "Layer",
    "MaxPool2d",
    "NonFiniteLossError",
    "ReLU",
    "Sequential",
    "ShapeError",
    "Sigmoid",
    "Softmax",
    "backward",
    "flops",
    "forward",
    "gradcheck",
    "load_params",
    "log_softmax",
    "numeric_grad",
    "relative_error",
    "save_params",
    "sigmoid",
    "softmax",
]
