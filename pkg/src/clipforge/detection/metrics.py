"""Classification and detection evaluation: accuracy, F-beta, AP/mAP at IoU 0.5."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import DetectionSet, iou

IOU_THRESHOLD = 0.5


def accuracy(tp: int, tn: int, fp: int, fn: int) -> float:
    total = tp + tn + fp + fn
    if total == 0:
        raise ValueError("accuracy of zero samples is undefined")
    return (tp + tn) / total


def fbeta(tp: int, fp: int, fn: int, beta: float = 1.0) -> float:
    """``(1 + b^2) tp / ((1 + b^2) tp + b^2 fn + fp)``; with b = 1 this is 2tp / (2tp + fp + fn)."""
    if tp + fp + fn == 0:
        raise ValueError("F-beta needs at least one of tp, fp, fn to be non-zero")
    b2 = beta * beta
    return (1 + b2) * tp / ((1 + b2) * tp + b2 * fn + fp)


@dataclass
class ClassCurve:
    class_id: int
    ap: float
    recall: np.ndarray
    precision: np.ndarray
    confidence: np.ndarray
    num_gt: int
    tp_flags: np.ndarray = field(repr=False)


@dataclass
class MapResult:
    per_class: dict[int, ClassCurve]
    mean_ap: float


def match_class(sets: list[DetectionSet], class_id: int):
    """Greedy matching for one class.

    Predictions are visited by confidence, highest first (ties by input order).  Each
    one takes the unmatched same-image ground truth with the highest IoU, provided
    that IoU reaches the threshold.  Returns ``(confidences, tp flags, num ground truth)``.
    """
    preds = []
    gts: dict[int, list] = {}
    for si, ds in enumerate(sets):
        gts[si] = [g for g in ds.ground_truth if g.class_id == class_id]
        preds += [(p.confidence, si, p) for p in ds.predictions if p.class_id == class_id]
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][0], i))
    used = {si: np.zeros(len(g), dtype=bool) for si, g in gts.items()}
    conf = np.array([preds[i][0] for i in order], dtype=np.float64)
    flags = np.zeros(len(order), dtype=bool)
    for rank, i in enumerate(order):
        _, si, p = preds[i]
        best, best_j = -1.0, -1
        for j, g in enumerate(gts[si]):
            if used[si][j]:
                continue
            o = iou(p, g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= IOU_THRESHOLD:
            used[si][best_j] = True
            flags[rank] = True
    return conf, flags, sum(len(g) for g in gts.values())


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope, all-points interpolation."""
    r = np.concatenate([[0.0], recall, [recall[-1] if len(recall) else 0.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1]
    idx = np.nonzero(r[1:] != r[:-1])[0]
    return float(np.sum((r[idx + 1] - r[idx]) * p[idx + 1]))


def map50(sets: list[DetectionSet]) -> MapResult:
    """Per-class AP at IoU 0.5 and their unweighted mean over classes with ground truth."""
    classes = sorted({g.class_id for ds in sets for g in ds.ground_truth})
    if not classes:
        raise ValueError("mAP needs at least one ground-truth box")
    per = {}
    for c in classes:
        conf, flags, n_gt = match_class(sets, c)
        tp = np.cumsum(flags)
        fp = np.cumsum(~flags)
        recall = tp / n_gt
        precision = tp / np.maximum(tp + fp, 1)
        ap = average_precision(recall, precision) if len(flags) else 0.0
        per[c] = ClassCurve(c, ap, recall, precision, conf, n_gt, flags)
    return MapResult(per, float(np.mean([per[c].ap for c in classes])))


def f1_at(sets: list[DetectionSet], threshold: float = 0.5) -> float:
    """F1 over all classes counting only predictions with confidence >= ``threshold``."""
    tp = fp = n_gt = 0
    kept = [
        DetectionSet(ds.image_id, ds.ground_truth, [p for p in ds.predictions if p.confidence >= threshold])
        for ds in sets
    ]
    for c in sorted({b.class_id for ds in sets for b in ds.ground_truth + ds.predictions}):
        _, flags, g = match_class(kept, c)
        tp += int(flags.sum())
        fp += int((~flags).sum())
        n_gt += g
    fn = n_gt - tp
    if tp + fp + fn == 0:
        return 1.0
    return fbeta(tp, fp, fn, 1.0)
