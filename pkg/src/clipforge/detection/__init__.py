"""Attention layers, box losses and detection metrics."""

from .attention import (
    CBAM,
    ECA,
    ChannelAttention,
    ShuffleAttention,
    SpatialAttention,
    channel_shuffle,
    eca_kernel_size,
    make_attention,
    shuffle_permutation,
)
from .boxes import (
    BoundingBox,
    DetectionSet,
    aspect_v,
    ciou_loss,
    ciou_loss_and_grad,
    diou_penalty,
    iou,
)
from .io import (
    DetectionFormatError,
    load_detection_sets,
    pr_curve_csv,
    read_boxes,
    write_boxes,
)
from .losses import (
    bce_loss,
    bce_loss_and_grad,
    dfl_loss,
    dfl_loss_and_grad,
    dfl_loss_logits,
)
from .metrics import (
    MapResult,
    accuracy,
    average_precision,
    f1_at,
    fbeta,
    map50,
    match_class,
)

__all__ = [
    "CBAM",
    "ECA",
    "BoundingBox",
    "ChannelAttention",
    "DetectionFormatError",
    "DetectionSet",
    "MapResult",
    "ShuffleAttention",
    "SpatialAttention",
    "accuracy",
    "aspect_v",
    "average_precision",
    "bce_loss",
    "bce_loss_and_grad",
    "channel_shuffle",
    "ciou_loss",
    "ciou_loss_and_grad",
    "dfl_loss",
    "dfl_loss_and_grad",
    "dfl_loss_logits",
    "diou_penalty",
    "eca_kernel_size",
    "f1_at",
    "fbeta",
    "iou",
    "load_detection_sets",
    "make_attention",
    "map50",
    "match_class",
    "pr_curve_csv",
    "read_boxes",
    "shuffle_permutation",
    "write_boxes",
]
