"""Deterministic synthetic aerial-fire corpus.

Negatives show a drifting low-frequency ground texture under simulated camera
jitter.  Positives share that background and, from a seeded entry frame on, carry
a bright flickering blob for a seeded number of frames (``blob_duration``; ``None``
keeps it to the end).  Frames showing the blob are labeled 1, all others 0, so a
positive video's label is the OR of its frame labels.

Each video draws from its own ``default_rng([seed, index])`` stream, so videos
can be generated independently and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import VideoSample

FIRE_RGB = np.array([1.0, 0.62, 0.22])
GROUND_RGB = np.array([0.30, 0.36, 0.20])
GROUND_TINT = np.array([0.55, 0.60, 0.35])


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_videos: int = 30
    frames_per_video: int = 64
    frame_size: int = 32
    channels: int = 3
    positive_ratio: tuple[int, int] = (2, 1)
    blob_radius: tuple[float, float] = (2.0, 3.5)
    blob_intensity: float = 0.95
    flicker: float = 0.35
    entry_range: tuple[float, float] = (0.3, 0.85)
    blob_duration: tuple[int, int] | None = (6, 14)
    drift_speed: float = 0.4
    jitter: float = 0.8
    noise: float = 0.02
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.num_videos < 0 or self.frames_per_video < 1:
            raise ValueError("num_videos must be >= 0 and frames_per_video >= 1")
        if self.frame_size < 4:
            raise ValueError("frame_size must be >= 4")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if min(self.positive_ratio) < 0 or sum(self.positive_ratio) == 0:
            raise ValueError("positive_ratio must be two non-negative integers, not both zero")
        if self.blob_duration is not None and not 1 <= self.blob_duration[0] <= self.blob_duration[1]:
            raise ValueError("blob_duration must be (lo, hi) with 1 <= lo <= hi")

    @property
    def num_positive(self) -> int:
        pos, neg = self.positive_ratio
        return int(np.floor(self.num_videos * pos / (pos + neg) + 0.5))


def _background(rng, size: int, frames: int, spec: SyntheticCorpusSpec):
    """Per-frame ground texture plus the camera offsets used to render it."""
    k = 4
    freqs = rng.uniform(0.08, 0.35, (k, 2)) * rng.choice([-1.0, 1.0], (k, 2))
    phases = rng.uniform(0.0, 2 * np.pi, k)
    amps = rng.uniform(0.4, 1.0, k)
    amps /= amps.sum()
    angle = rng.uniform(0.0, 2 * np.pi)
    drift = spec.drift_speed * np.array([np.cos(angle), np.sin(angle)])
    offsets = np.arange(frames)[:, None] * drift + rng.normal(0.0, spec.jitter, (frames, 2))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    tex = np.zeros((frames, size, size))
    for f in range(frames):
        oy, ox = offsets[f]
        arg = (yy[None] + oy) * freqs[:, 0, None, None] + (xx[None] + ox) * freqs[:, 1, None, None]
        tex[f] = np.tensordot(amps, np.sin(arg + phases[:, None, None]), axes=1)
    return 0.5 + 0.5 * tex, offsets


def _render_video(spec: SyntheticCorpusSpec, index: int, positive: bool) -> VideoSample:
    rng = np.random.default_rng([spec.rng_seed, index])
    n, size = spec.frames_per_video, spec.frame_size
    tex, offsets = _background(rng, size, n, spec)
    if spec.channels == 3:
        pix = GROUND_RGB[None, :, None, None] + 0.45 * tex[:, None] * GROUND_TINT[None, :, None, None]
    else:
        pix = (0.28 + 0.3 * tex)[:, None]
    labels = np.zeros(n, dtype=np.int8)

    if positive:
        lo, hi = spec.entry_range
        entry = int(rng.integers(int(lo * n), max(int(lo * n) + 1, int(hi * n))))
        entry = min(entry, n - 1)
        radius = rng.uniform(*spec.blob_radius)
        center = rng.uniform(0.25 * size, 0.75 * size, 2)
        walk = np.cumsum(rng.normal(0.0, 0.3, (n, 2)), axis=0)
        flicker = 1.0 - spec.flicker * rng.uniform(0.0, 1.0, n)
        stop = n
        if spec.blob_duration is not None:
            stop = min(n, entry + int(rng.integers(spec.blob_duration[0], spec.blob_duration[1] + 1)))
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        color = FIRE_RGB if spec.channels == 3 else np.array([1.0])
        for f in range(entry, stop):
            cy, cx = center + walk[f] - walk[entry] - (offsets[f] - offsets[entry])
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            alpha = spec.blob_intensity * flicker[f] * np.exp(-d2 / (2.0 * radius**2))
            pix[f] = pix[f] * (1.0 - alpha) + color[:, None, None] * alpha
        labels[entry:stop] = 1

    pix = pix + rng.normal(0.0, spec.noise, pix.shape)
    pix = np.clip(pix, 0.0, 1.0).astype(np.float32)
    return VideoSample(pix, int(positive), f"video{index:04d}", labels)


def generate_corpus(spec: SyntheticCorpusSpec) -> list[VideoSample]:
    """All videos of ``spec``, positives and negatives interleaved by a seeded shuffle."""
    order_rng = np.random.default_rng([spec.rng_seed, 2**31 - 1])
    kinds = np.zeros(spec.num_videos, dtype=bool)
    kinds[: spec.num_positive] = True
    order_rng.shuffle(kinds)
    return [_render_video(spec, i, bool(kinds[i])) for i in range(spec.num_videos)]
