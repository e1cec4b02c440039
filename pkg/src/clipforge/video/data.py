from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

UNLABELED = -1


@dataclass
class Frame:
    """One raster frame, ``pixels`` shaped (C, H, W) with values in [0, 1]."""

    pixels: np.ndarray
    label: int | None = None

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[0] not in (1, 3):
            raise ValueError(f"frame pixels must be (C, H, W) with C in {{1, 3}}, got {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("frame pixel values must lie in [0, 1]")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass
class VideoSample:
    """An ordered run of equally sized frames with a binary sample label.

    ``pixels`` is (T, C, H, W) float32; ``frame_labels`` holds 0/1 per frame or
    ``UNLABELED``.
    """

    pixels: np.ndarray
    label: int
    source_id: str = ""
    frame_labels: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.pixels.ndim != 4 or len(self.pixels) < 1:
            raise ValueError(f"video pixels must be (T, C, H, W) with T >= 1, got {self.pixels.shape}")
        if self.pixels.shape[1] not in (1, 3):
            raise ValueError(f"video channels must be 1 or 3, got {self.pixels.shape[1]}")
        if min(self.pixels.shape[2:]) < 4:
            raise ValueError(f"frames must be at least 4x4, got {self.pixels.shape[2:]}")
        if self.frame_labels is None:
            self.frame_labels = np.full(len(self.pixels), UNLABELED, dtype=np.int8)
        self.frame_labels = np.asarray(self.frame_labels, dtype=np.int8)
        if self.frame_labels.shape != (len(self.pixels),):
            raise ValueError("one frame label per frame is required")

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def frames(self) -> list[Frame]:
        return [self.frame(i) for i in range(len(self))]

    def frame(self, i: int) -> Frame:
        lab = int(self.frame_labels[i])
        return Frame(self.pixels[i], None if lab == UNLABELED else lab)

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], label: int | None = None, source_id: str = "") -> "VideoSample":
        if not frames:
            raise ValueError("a video needs at least one frame")
        shape = frames[0].pixels.shape
        if any(f.pixels.shape != shape for f in frames):
            raise ValueError("all frames of a video must share dimensions")
        labels = np.array([UNLABELED if f.label is None else f.label for f in frames], dtype=np.int8)
        if label is None:
            label = int(np.any(labels == 1))
        pixels = np.stack([f.pixels for f in frames]).astype(np.float32)
        return cls(pixels, int(label), source_id, labels)

    def subset(self, indices: Iterable[int], source_id: str | None = None) -> "VideoSample":
        """Frames at ``indices`` (kept in the given order), sample label unchanged."""
        idx = np.asarray(list(indices), dtype=np.int64)
        return VideoSample(
            self.pixels[idx].copy(),
            self.label,
            self.source_id if source_id is None else source_id,
            self.frame_labels[idx].copy(),
        )


def build_samples(frames: Sequence[Frame], window: int, prefix: str = "sample") -> list[VideoSample]:
    """Cut a labeled frame stream into non-overlapping windows.

    A window is positive iff any of its frames is positive.  A trailing remainder
    shorter than ``window`` is dropped.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if len(frames) == 0:
        raise ValueError("cannot build samples from an empty frame stream")
    if any(f.label is None for f in frames):
        raise ValueError("build_samples needs a frame label on every frame")
    out = []
    for k, start in enumerate(range(0, len(frames) - window + 1, window)):
        chunk = frames[start : start + window]
        label = int(any(f.label == 1 for f in chunk))
        out.append(VideoSample.from_frames(chunk, label, f"{prefix}{k:04d}"))
    return out
