"""Differentiable policy episodes for the policy-training phase.

Control flow follows the hard Gumbel-Max choice, exactly as the episode runner
does.  For the backward pass each step also evaluates the branch every other
action would have taken, so the next hidden state can be written as

    h_{t+1} = sum_j y_tj * GRU(CNN(resize(mix(v[l : l + N_j]), R_j)), h_t)

With the straight-through estimator ``y_t`` is the one-hot choice in the forward
pass and the Gumbel-Softmax sample in the backward pass.  With ``relaxed`` it is
the Gumbel-Softmax sample in both, which makes the episode a smooth function of
the policy parameters for a fixed noise draw (used to check the gradients).

The balance term can be taken per episode or on the usage pooled over a batch;
``episode_backward`` only needs its gradient w.r.t. the episode's usage.

The compute term is a differentiable surrogate of the ledger-based one: step 0
costs one full-resolution step and step ``t + 1`` costs ``sum_j y_tj c_j``.  The
last decision launches no step, so it only feeds the balance term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..engine.mixup import clip_mixup, sample_lambda
from ..engine.stations import extract_station_points, nearest_future_station
from ..numerics.layers import softmax
from ..policy import (
    ActionDistribution,
    gumbel_max,
    gumbel_softmax,
    gumbel_softmax_backward,
    sample_gumbel,
)
from .losses import LossReport, balance_loss_and_grad, cross_entropy

ESTIMATORS = ("straight-through", "relaxed")


@dataclass
class EpisodeGradient:
    report: LossReport
    grads: dict[str, np.ndarray]
    predicted: int
    flops: int
    chosen: list[int] = field(default_factory=list)


@dataclass
class _Step:
    logits: np.ndarray
    pcache: object
    soft: np.ndarray
    y: np.ndarray
    # filled when the decision launches a next step
    branch_h: np.ndarray | None = None
    branch_caches: list | None = None


@dataclass
class EpisodeTape:
    """Forward record of one episode, enough to run the backward pass later."""

    steps: list
    l_c: float
    l_g: float
    usage: np.ndarray
    dh_final: np.ndarray
    fc_grads: dict
    predicted: int
    flops: int
    chosen: list
    tau: float
    costs: np.ndarray
    c_full: float


def episode_forward(
    video,
    engine,
    rng: np.random.Generator,
    tau: float,
    estimator: str = "straight-through",
    noise: list | None = None,
    lams: list | None = None,
) -> EpisodeTape:
    """Sample-mode episode keeping every branch needed for the gradient.

    ``noise`` and ``lams`` replay fixed Gumbel draws and mixup weights step by step
    instead of drawing from ``rng``.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    space = engine.action_space
    na = len(space)
    pixels = video.pixels
    length = pixels.shape[0]
    full = space.full_resolution
    gru, policy = engine.gru, engine.policy
    stations = extract_station_points(video, min(engine.config.station_count, len(video)), engine, full)

    c_full = engine.step_flops(full)
    costs = np.array([engine.step_flops(r) for r in space.resolutions], dtype=np.float64)

    feat0 = engine.features(pixels[:1].astype(np.float64), full)
    h = gru.forward((feat0, np.zeros((1, engine.hidden_size))))
    steps: list[_Step] = []
    chosen: list[int] = []
    cursor = 0
    total_flops = len(stations) * engine.cnn_flops(full) + c_full
    while cursor < length:
        t = len(steps)
        s = nearest_future_station(cursor, stations, engine.feature_size)
        logits, pcache = policy.logits_cached(h, s[None])
        logits = logits[0]
        dist = ActionDistribution(softmax(logits), logits)
        g = np.asarray(noise[t], dtype=np.float64) if noise is not None else sample_gumbel(rng, na)
        k_idx = gumbel_max(dist, noise=g)
        soft = gumbel_softmax(dist, tau, noise=g)
        y = soft.copy() if estimator == "relaxed" else np.eye(na)[k_idx]
        st = _Step(logits, pcache, soft, y)
        steps.append(st)
        chosen.append(k_idx)
        total_flops += engine.policy_flops()
        n = min(length - cursor, space.actions[k_idx])
        if cursor + n < length:
            lam = lams[t] if lams is not None else sample_lambda(engine.config.alpha, rng)
            hs, caches = [], []
            for a, r in zip(space.actions, space.resolutions):
                nj = min(length - cursor, a)
                ends = pixels[[cursor, cursor + nj - 1] if nj > 1 else [cursor]].astype(np.float64)
                feat = engine.features(clip_mixup(ends, lam)[None], r)
                hj, cj = gru.forward_cached((feat, h))
                hs.append(hj[0])
                caches.append(cj)
            st.branch_h = np.array(hs)
            st.branch_caches = caches
            h = (y @ st.branch_h)[None]
            total_flops += int(costs[k_idx])
        cursor += n

    logits_c, fcache = engine.fc.forward_cached(h)
    l_c, dlogits_c = cross_entropy(logits_c, [video.label])
    gfc, dh = engine.fc.backward(fcache, dlogits_c)
    usage = np.array([st.y for st in steps]).mean(axis=0)
    # step 0 costs one full step; each decision but the last launches the next
    step_costs = [c_full] + [float(st.y @ costs) for st in steps[:-1]]
    l_g = float(np.mean(step_costs) / c_full)
    return EpisodeTape(
        steps, l_c, l_g, usage, dh[0], gfc, int(np.argmax(logits_c[0])), int(total_flops), chosen, tau, costs, c_full
    )


def episode_backward(
    tape: EpisodeTape, engine, dusage: np.ndarray, gamma: float = 0.1, train_classifier: bool = True
) -> dict[str, np.ndarray]:
    """Gradient of ``L_c + <dusage, usage> + gamma * L_g`` w.r.t. ``policy.*`` (and ``fc.*``).

    ``dusage`` is the (already weighted) gradient of the balance term w.r.t. this
    episode's usage vector.
    """
    gru, policy = engine.gru, engine.policy
    na = len(engine.action_space)
    steps, num = tape.steps, len(tape.steps)
    grads = {f"policy.{k}": np.zeros_like(v) for k, v in policy.named_params().items()}
    dh_cur = tape.dh_final  # partial gradient w.r.t. the hidden state read by decision t
    dh_next = None  # full gradient w.r.t. the hidden state produced by step t + 1
    for t in reversed(range(num)):
        st = steps[t]
        dy = dusage / num
        if st.branch_h is not None:
            dy = dy + gamma * tape.costs / (num * tape.c_full) + st.branch_h @ dh_next
            for j in range(na):
                if st.y[j] != 0.0:
                    _, (_, dhj) = gru.backward(st.branch_caches[j], (st.y[j] * dh_next)[None])
                    dh_cur = dh_cur + dhj[0]
        dlogits = gumbel_softmax_backward(st.logits, st.soft, tape.tau, dy)
        pg, dh_pol, _ = policy.backward(st.pcache, dlogits[None])
        for k, v in pg.items():
            grads[f"policy.{k}"] += v
        dh_next = dh_cur + dh_pol[0]
        dh_cur = np.zeros_like(dh_next)
    if train_classifier:
        grads.update({f"fc.{k}": v for k, v in tape.fc_grads.items()})
    return grads


def policy_episode(
    video,
    engine,
    rng: np.random.Generator,
    tau: float,
    beta: float = 0.3,
    gamma: float = 0.1,
    balance_form: str = "abs",
    estimator: str = "straight-through",
    train_classifier: bool = True,
    noise: list | None = None,
    lams: list | None = None,
) -> EpisodeGradient:
    """One episode with its own balance term: the loss and its gradient."""
    tape = episode_forward(video, engine, rng, tau, estimator, noise, lams)
    l_b, dusage = balance_loss_and_grad(tape.usage, balance_form)
    grads = episode_backward(tape, engine, beta * dusage, gamma, train_classifier)
    report = LossReport(tape.l_c, l_b, tape.l_g, beta, gamma)
    return EpisodeGradient(report, grads, tape.predicted, tape.flops, tape.chosen)
