"""Axis-aligned boxes, IoU and the Complete-IoU regression loss.

    CIoU = 1 - IoU + d^2 / c^2 + v^2 / ((1 - IoU) + v)
    v    = (4 / pi^2) * (atan(w_gt / h_gt) - atan(w / h))^2

``d`` is the distance between box centres and ``c`` the diagonal of the smallest
enclosing box.  At IoU = 1 and v = 0 the last term is 0/0; its limit 0 is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0
    confidence: float | None = None

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass
class DetectionSet:
    image_id: str
    ground_truth: list[BoundingBox]
    predictions: list[BoundingBox]

    def __post_init__(self) -> None:
        if any(p.confidence is None for p in self.predictions):
            raise ValueError(f"image {self.image_id}: every prediction needs a confidence")


def _coords(box) -> np.ndarray:
    c = box.coords if isinstance(box, BoundingBox) else np.asarray(box, dtype=np.float64)
    if c.shape != (4,) or not (c[2] > c[0] and c[3] > c[1]):
        raise ValueError(f"degenerate box {c}")
    return c


def iou(a, b) -> float:
    a, b = _coords(a), _coords(b)
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def diou_penalty(pred, gt) -> float:
    """Squared centre distance over the squared enclosing-box diagonal."""
    p, g = _coords(pred), _coords(gt)
    d2 = ((p[0] + p[2]) / 2 - (g[0] + g[2]) / 2) ** 2 + ((p[1] + p[3]) / 2 - (g[1] + g[3]) / 2) ** 2
    cw = max(p[2], g[2]) - min(p[0], g[0])
    ch = max(p[3], g[3]) - min(p[1], g[1])
    return float(d2 / (cw * cw + ch * ch))


def aspect_v(pred, gt) -> float:
    p, g = _coords(pred), _coords(gt)
    diff = math.atan((g[2] - g[0]) / (g[3] - g[1])) - math.atan((p[2] - p[0]) / (p[3] - p[1]))
    return 4.0 / math.pi**2 * diff * diff


def ciou_loss(pred, gt) -> float:
    return ciou_loss_and_grad(pred, gt)[0]


def ciou_loss_and_grad(pred, gt) -> tuple[float, np.ndarray]:
    """CIoU loss and its gradient w.r.t. the predicted ``(x_min, y_min, x_max, y_max)``.

    ``v`` is treated as a full function of the prediction (no stop-gradient on the
    trade-off weight), so the gradient is that of the expression exactly as written.
    """
    p, g = _coords(pred), _coords(gt)
    x1, y1, x2, y2 = p
    w, h = x2 - x1, y2 - y1

    # intersection with subgradient masks (ties send the gradient to the prediction)
    ix1, ix2 = max(x1, g[0]), min(x2, g[2])
    iy1, iy2 = max(y1, g[1]), min(y2, g[3])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    union = w * h + (g[2] - g[0]) * (g[3] - g[1]) - inter
    u = inter / union

    d_iw = np.zeros(4)
    d_ih = np.zeros(4)
    if iw > 0:
        d_iw[2] = 1.0 if x2 <= g[2] else 0.0
        d_iw[0] = -1.0 if x1 >= g[0] else 0.0
    if ih > 0:
        d_ih[3] = 1.0 if y2 <= g[3] else 0.0
        d_ih[1] = -1.0 if y1 >= g[1] else 0.0
    d_inter = d_iw * ih + d_ih * iw
    d_area = np.array([-h, -w, h, w])
    d_union = d_area - d_inter
    d_u = (d_inter * union - inter * d_union) / union**2

    # centre distance over enclosing diagonal
    dx = (x1 + x2 - g[0] - g[2]) / 2
    dy = (y1 + y2 - g[1] - g[3]) / 2
    d2 = dx * dx + dy * dy
    ex1, ex2 = min(x1, g[0]), max(x2, g[2])
    ey1, ey2 = min(y1, g[1]), max(y2, g[3])
    cw, ch = ex2 - ex1, ey2 - ey1
    c2 = cw * cw + ch * ch
    d_d2 = np.array([dx, dy, dx, dy])
    d_cw = np.array([-1.0 if x1 <= g[0] else 0.0, 0.0, 1.0 if x2 >= g[2] else 0.0, 0.0])
    d_ch = np.array([0.0, -1.0 if y1 <= g[1] else 0.0, 0.0, 1.0 if y2 >= g[3] else 0.0])
    d_c2 = 2 * cw * d_cw + 2 * ch * d_ch
    pen = d2 / c2
    d_pen = (d_d2 * c2 - d2 * d_c2) / c2**2

    # aspect-ratio consistency
    k = 4.0 / math.pi**2
    diff = math.atan((g[2] - g[0]) / (g[3] - g[1])) - math.atan(w / h)
    v = k * diff * diff
    # d atan(w/h) = (h dw - w dh) / (w^2 + h^2)
    d_atan = np.array([-h, w, h, -w]) / (w * w + h * h)
    d_v = -2 * k * diff * d_atan

    denom = (1.0 - u) + v
    if denom == 0.0:
        term, d_term = 0.0, np.zeros(4)
    else:
        term = v * v / denom
        d_term = (2 * v * d_v * denom - v * v * (d_v - d_u)) / denom**2

    loss = 1.0 - u + pen + term
    return float(loss), -d_u + d_pen + d_term
