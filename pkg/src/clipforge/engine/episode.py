"""The episode runner: walk a video under policy control, merging clips as it goes.

Loop, for a video of length L::

    x <- v[0]; l <- 0
    while l < L:
        h <- f_s(x)                     # first step at full resolution
        k <- policy([h : nearest station after l])
        N <- min(L - l, k)
        x <- mixup(v[l : l + N]);  l <- l + N

Each executed step is one CNN+GRU evaluation plus one policy evaluation.  The clip
mixed by the final decision is never fed to f_s, since the loop ends first.  The
resolution for step ``t + 1`` is the one paired with the action chosen at step ``t``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..policy import ActionDistribution, gumbel_max, gumbel_softmax, sample_gumbel
from .mixup import clip_mixup, sample_lambda
from .model import Engine, step_features
from .stations import StationPointSet, extract_station_points, nearest_future_station

MODES = ("sample", "argmax")


@dataclass(frozen=True)
class StepCost:
    step: int
    feature_flops: int
    policy_flops: int
    station_flops: int = 0

    @property
    def flops(self) -> int:
        return self.feature_flops + self.policy_flops + self.station_flops


@dataclass
class FlopsLedger:
    """Per-step FLOP accounting for one video.

    Station-point extraction happens once per video; its cost is booked on step 0
    so that the video total stays the plain sum of the per-step entries.
    """

    frame_count: int
    per_step: list[StepCost] = field(default_factory=list)

    def add(self, cost: StepCost) -> None:
        self.per_step.append(cost)

    @property
    def total_video(self) -> int:
        return sum(c.flops for c in self.per_step)

    @property
    def per_frame(self) -> Fraction:
        return Fraction(self.total_video, self.frame_count)

    @property
    def feature_flops(self) -> list[int]:
        return [c.feature_flops for c in self.per_step]


@dataclass(frozen=True)
class TraceStep:
    step: int
    cursor: int  # position after this step's clip is consumed
    action: int
    consumed: int
    resolution: int  # resolution this step's feature was extracted at
    flops: int


@dataclass
class EpisodeResult:
    h_final: np.ndarray
    trace: list[TraceStep]
    ledger: FlopsLedger
    distributions: list[ActionDistribution]
    stations: StationPointSet

    @property
    def action_indices(self) -> list[int]:
        return [d.chosen for d in self.distributions]


class FixedPolicy:
    """Scripted choices: a single action index, or a sequence cycled by step.

    Costs nothing and uses no station points; the reported distribution is uniform.
    """

    uses_stations = False

    def __init__(self, choice):
        self.choices = [choice] if np.isscalar(choice) else list(choice)
        if not self.choices:
            raise ValueError("FixedPolicy needs at least one action index")

    def __call__(self, step: int, num_actions: int) -> ActionDistribution:
        idx = int(self.choices[step % len(self.choices)])
        if not 0 <= idx < num_actions:
            raise ValueError(f"action index {idx} outside [0, {num_actions})")
        probs = np.full(num_actions, 1.0 / num_actions)
        return ActionDistribution(probs, np.zeros(num_actions), chosen=idx)

    def flops(self) -> int:
        return 0


def run_episode(
    video,
    engine: Engine,
    mode: str = "argmax",
    rng: np.random.Generator | None = None,
    policy: FixedPolicy | None = None,
    stations: StationPointSet | None = None,
    lam: float | None = None,
    soft_tau: float | None = None,
) -> EpisodeResult:
    """Run one episode over ``video``.

    ``mode="sample"`` draws the action with Gumbel-Max and a fresh Beta(alpha, alpha)
    mixup weight per step; ``mode="argmax"`` takes the most probable action with
    weight 0.5.  ``policy`` overrides the engine's policy network with scripted
    choices.  With ``soft_tau`` set, each step also records a Gumbel-Softmax sample
    at that temperature (drawn from ``rng``) for scoring.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if (mode == "sample" or soft_tau is not None) and rng is None:
        raise ValueError("sampling needs an rng")
    space = engine.action_space
    pixels = video.pixels
    length = pixels.shape[0]
    full = space.full_resolution
    use_stations = policy is None or getattr(policy, "uses_stations", True)
    if stations is None:
        # a video shorter than the station count gets one station per frame
        count = min(engine.config.station_count, length) if use_stations else 0
        stations = extract_station_points(video, count, engine, full)
    station_cost = len(stations) * engine.cnn_flops(full)
    policy_cost = engine.policy_flops() if policy is None else policy.flops()

    ledger = FlopsLedger(length)
    trace: list[TraceStep] = []
    dists: list[ActionDistribution] = []
    h = np.zeros(engine.hidden_size)
    x = pixels[0].astype(np.float64)
    res = full
    cursor = 0
    step = 0
    while cursor < length:
        h, feat_cost = step_features(x, res, engine, h)
        if policy is None:
            s = nearest_future_station(cursor, stations, engine.feature_size)
            dist = engine.policy(h, s)
            if mode == "sample":
                g = sample_gumbel(rng, len(space))
                dist.noise = g
                dist.chosen = gumbel_max(dist, noise=g)
            else:
                dist.chosen = int(np.argmax(dist.probs))
            if soft_tau is not None:
                g = dist.noise if dist.noise is not None else sample_gumbel(rng, len(space))
                dist.tau = soft_tau
                dist.gumbel_soft = gumbel_softmax(dist, soft_tau, noise=g)
        else:
            dist = policy(step, len(space))
        k = space.actions[dist.chosen]
        n = min(length - cursor, k)
        cost = StepCost(step, feat_cost, policy_cost, station_cost if step == 0 else 0)
        ledger.add(cost)
        trace.append(TraceStep(step, cursor + n, k, n, res, cost.flops))
        dists.append(dist)
        if cursor + n < length:
            # the clip mixed by the final decision is never processed, so skip it
            weight = lam if lam is not None else (sample_lambda(engine.config.alpha, rng) if mode == "sample" else 0.5)
            ends = pixels[[cursor, cursor + n - 1] if n > 1 else [cursor]].astype(np.float64)
            x = clip_mixup(ends, weight)
            res = space.resolutions[dist.chosen]
        cursor += n
        step += 1
    return EpisodeResult(h, trace, ledger, dists, stations)


def trace_csv(result: EpisodeResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "cursor", "action", "resolution", "flops"])
    for t in result.trace:
        writer.writerow([t.step, t.cursor, t.action, t.resolution, t.flops])
    return buf.getvalue()
