"""Preference scores for clips and frames, and top-n frame selection.

A clip's score is ``sum_j c_j / A_j`` where ``c`` is the step's action
distribution (S2), its Gumbel-Softmax sample (S3), or a one-hot vector at the
chosen action (S1).  Within a clip the centre frame carries the full score and
each frame further away is scaled by another factor of 0.9.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .engine.episode import EpisodeResult, run_episode
from .policy import ActionDistribution, ActionSpace

VARIANTS = ("S1", "S2", "S3")
DECAY = 0.9


@dataclass(frozen=True)
class PreferenceRecord:
    start: int
    end: int  # exclusive
    score: float
    variant: str

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError(f"empty clip [{self.start}, {self.end})")
        if self.score < 0:
            raise ValueError("preference scores are non-negative")

    @property
    def frame_scores(self) -> np.ndarray:
        return frame_scores(self)


def clip_score(dist: ActionDistribution, variant: str, space: ActionSpace) -> float:
    if variant == "S1":
        if dist.chosen is None:
            raise ValueError("S1 needs the chosen action")
        c = dist.one_hot()
    elif variant == "S2":
        c = dist.probs
    elif variant == "S3":
        if dist.gumbel_soft is None:
            raise ValueError("S3 needs a Gumbel-Softmax sample")
        c = dist.gumbel_soft
    else:
        raise ValueError(f"unknown score variant {variant!r}; expected one of {VARIANTS}")
    return float(np.sum(np.asarray(c) / np.asarray(space.actions, dtype=np.float64)))


def frame_scores(record: PreferenceRecord) -> np.ndarray:
    n = record.end - record.start
    centre = n // 2
    return record.score * DECAY ** np.abs(np.arange(n) - centre)


def top_indices(scores: np.ndarray, budget: int) -> np.ndarray:
    """Indices of the ``budget`` highest scores (ties go to the earlier frame), ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= budget <= len(scores):
        raise ValueError(f"budget must lie in [1, {len(scores)}], got {budget}")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:budget])


def select_frames(video, scores: np.ndarray, budget: int, source_id: str | None = None):
    """Top-``budget`` frames by score, kept in temporal order with their labels."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(video),):
        raise ValueError(f"need one score per frame: {scores.shape} vs {len(video)} frames")
    return video.subset(top_indices(scores, budget), source_id)


def score_records(result: EpisodeResult, variant: str, space: ActionSpace) -> list[PreferenceRecord]:
    """One record per consumed clip; the decision at each step scores the clip it consumes."""
    out = []
    start = 0
    for step, dist in zip(result.trace, result.distributions):
        out.append(PreferenceRecord(start, step.cursor, clip_score(dist, variant, space), variant))
        start = step.cursor
    return out


def scores_from_records(records: list[PreferenceRecord], length: int) -> np.ndarray:
    scores = np.full(length, np.nan)
    for rec in records:
        scores[rec.start : rec.end] = frame_scores(rec)
    if np.isnan(scores).any():
        raise ValueError("clips do not cover the whole video")
    # frame 0 seeds the episode before any decision; it takes the first clip's peak
    scores[0] = records[0].score
    return scores


def score_video(video, engine, variant: str = "S1", rng=None, soft_tau: float = 1.0) -> np.ndarray:
    """Per-frame preference scores from an argmax-mode episode.

    S3 needs Gumbel noise even at evaluation time; it is drawn from ``rng``
    (default ``default_rng(0)``) at temperature ``soft_tau``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown score variant {variant!r}; expected one of {VARIANTS}")
    kw = {}
    if variant == "S3":
        kw = {"rng": np.random.default_rng(0) if rng is None else rng, "soft_tau": soft_tau}
    result = run_episode(video, engine, mode="argmax", **kw)
    return scores_from_records(score_records(result, variant, engine.action_space), len(video))


def uniform_indices(length: int, budget: int) -> np.ndarray:
    """Evenly spaced frames: the centre of each of ``budget`` equal segments."""
    if not 1 <= budget <= length:
        raise ValueError(f"budget must lie in [1, {length}], got {budget}")
    return ((2 * np.arange(budget) + 1) * length) // (2 * budget)


def random_indices(length: int, budget: int, rng: np.random.Generator) -> np.ndarray:
    if not 1 <= budget <= length:
        raise ValueError(f"budget must lie in [1, {length}], got {budget}")
    return np.sort(rng.choice(length, budget, replace=False))


def scores_csv(scores: np.ndarray, variant: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_index", "score", "variant"])
    for i, s in enumerate(scores):
        writer.writerow([i, repr(float(s)), variant])
    return buf.getvalue()
