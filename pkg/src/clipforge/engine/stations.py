"""Station points: uniformly placed lookahead frames and their features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StationPointSet:
    indices: tuple[int, ...]
    features: np.ndarray  # (count, feature_dim)

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(idx):
            raise ValueError(f"need one feature row per station, got {feats.shape} for {len(idx)} stations")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"station indices must be strictly increasing: {idx}")
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def station_indices(length: int, count: int) -> tuple[int, ...]:
    """Interior uniform placement ``round((j + 1) * L / (count + 1))``, half rounding up.

    Short videos with many stations can make the rounded positions collide; those
    fall back to ``floor(j * L / count)``, which is always strictly increasing.
    """
    if count < 0 or count > length:
        raise ValueError(f"station count must lie in [0, {length}], got {count}")
    if count == 0:
        return ()
    idx = [int(np.floor((j + 1) * length / (count + 1) + 0.5)) for j in range(count)]
    ok = all(0 <= i < length for i in idx) and all(b > a for a, b in zip(idx, idx[1:]))
    if not ok:
        idx = [(j * length) // count for j in range(count)]
    return tuple(idx)


def extract_station_points(video, count: int, cnn, resolution: int | None = None) -> StationPointSet:
    """Features of the station frames at ``resolution`` (default: the frame size).

    ``cnn`` is anything with ``features(pixels, resolution) -> (N, F)``.
    """
    idx = station_indices(len(video), count)
    res = video.pixels.shape[-1] if resolution is None else resolution
    if not idx:
        return StationPointSet((), np.zeros((0, cnn.feature_size)))
    pix = video.pixels[list(idx)].astype(np.float64)
    return StationPointSet(idx, cnn.features(pix, res))


def nearest_future_station(cursor: int, stations: StationPointSet, feature_dim: int | None = None) -> np.ndarray:
    """Feature of the first station strictly after ``cursor``; past the last one, the last.

    With no stations at all a zero vector of ``feature_dim`` keeps the policy input width.
    """
    if len(stations) == 0:
        dim = stations.feature_dim if feature_dim is None else feature_dim
        return np.zeros(dim)
    for i, m in enumerate(stations.indices):
        if m > cursor:
            return stations.features[i]
    return stations.features[-1]
