"""Detection interchange CSVs and P-R curve output."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .boxes import BoundingBox, DetectionSet
from .metrics import MapResult

HEADER = ["image_id", "class_id", "x_min", "y_min", "x_max", "y_max", "confidence"]


class DetectionFormatError(ValueError):
    pass


def read_boxes(path, predictions: bool) -> list[tuple[str, BoundingBox]]:
    """Rows of a detection CSV; errors carry the offending line number."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise DetectionFormatError(f"{path}:1: expected header {','.join(HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(HEADER):
                raise DetectionFormatError(f"{path}:{line}: expected {len(HEADER)} fields, got {len(row)}")
            try:
                conf = row[6].strip()
                if predictions and not conf:
                    raise ValueError("prediction without confidence")
                box = BoundingBox(
                    float(row[2]),
                    float(row[3]),
                    float(row[4]),
                    float(row[5]),
                    int(row[1]),
                    float(conf) if conf else None,
                )
            except ValueError as err:
                raise DetectionFormatError(f"{path}:{line}: {err}") from err
            out.append((row[0], box))
    return out


def load_detection_sets(gt_path, pred_path) -> list[DetectionSet]:
    gts = read_boxes(gt_path, predictions=False)
    preds = read_boxes(pred_path, predictions=True)
    images: dict[str, DetectionSet] = {}
    for image_id, box in gts:
        images.setdefault(image_id, DetectionSet(image_id, [], [])).ground_truth.append(box)
    for image_id, box in preds:
        images.setdefault(image_id, DetectionSet(image_id, [], [])).predictions.append(box)
    return [images[k] for k in sorted(images)]


def write_boxes(rows: list[tuple[str, BoundingBox]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for image_id, b in rows:
            conf = "" if b.confidence is None else repr(float(b.confidence))
            writer.writerow([image_id, int(b.class_id), *(repr(float(v)) for v in (b.x_min, b.y_min, b.x_max, b.y_max)), conf])


def pr_curve_csv(result: MapResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class_id", "recall", "precision"])
    for c, curve in sorted(result.per_class.items()):
        for r, p in zip(curve.recall, curve.precision):
            writer.writerow([c, repr(float(r)), repr(float(p))])
    return buf.getvalue()


def write_text(text: str, path) -> None:
    """Write ``text`` with ``\n`` line endings, creating parent folders as needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
