"""How much class information survives frame selection.

Each video is reduced to ``budget`` frames.  A linear probe on the mean frozen-CNN
feature of the kept frames is trained on the distilled training split and scored
on the distilled test split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics.layers import Dense
from ..selection import random_indices, score_video, top_indices, uniform_indices
from .losses import cross_entropy
from .optim import SGD

METHODS = ("S1", "S2", "S3", "uniform", "random")


def selected_indices(engine, video, method: str, budget: int, rng: np.random.Generator) -> np.ndarray:
    if method == "uniform":
        return uniform_indices(len(video), budget)
    if method == "random":
        return random_indices(len(video), budget, rng)
    if method in ("S1", "S2", "S3"):
        return top_indices(score_video(video, engine, method, rng=rng), budget)
    raise ValueError(f"unknown selection method {method!r}; expected one of {METHODS}")


def mean_features(engine, video, indices) -> np.ndarray:
    return engine.features(video.pixels[np.asarray(indices)], engine.full_resolution).mean(axis=0)


def train_probe(features: np.ndarray, labels: np.ndarray, seed: int, steps: int = 300, lr: float = 0.1):
    """Full-batch linear softmax probe on standardised features.  Returns a predict function."""
    mu = features.mean(axis=0)
    sd = features.std(axis=0) + 1e-8
    x = (features - mu) / sd
    probe = Dense(x.shape[1], int(labels.max()) + 1 if labels.size else 2, rng=np.random.default_rng(seed))
    opt = SGD({f"p.{k}": v for k, v in probe.params.items()}, lr, momentum=0.9, weight_decay=5e-4)
    for _ in range(steps):
        logits, cache = probe.forward_cached(x)
        _, dlogits = cross_entropy(logits, labels)
        grads, _ = probe.backward(cache, dlogits)
        opt.step({f"p.{k}": v for k, v in grads.items()})
    return lambda f: np.argmax(probe.forward((np.atleast_2d(f) - mu) / sd), axis=1)


@dataclass(frozen=True)
class DistillResult:
    method: str
    seed: int
    accuracy: float


def distilled_accuracy(engine, train_videos, test_videos, method: str, budget: int, seed: int) -> DistillResult:
    rng = np.random.default_rng([seed, 5])

    def feats(videos):
        return np.array([mean_features(engine, v, selected_indices(engine, v, method, budget, rng)) for v in videos])

    train_x, test_x = feats(train_videos), feats(test_videos)
    predict = train_probe(train_x, np.array([v.label for v in train_videos]), seed)
    acc = float(np.mean(predict(test_x) == np.array([v.label for v in test_videos])))
    return DistillResult(method, seed, acc)
