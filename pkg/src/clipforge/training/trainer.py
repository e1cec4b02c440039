"""Three-phase training schedule and evaluation.

1. CNN plus a per-frame head on frame labels.
2. CNN frozen; GRU and video classifier on video labels, fixed k = 1 at full resolution.
3. CNN and GRU frozen; policy (and optionally the classifier) on the total loss,
   temperature annealed once per optimizer step.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..engine.episode import FixedPolicy, run_episode
from ..engine.model import Engine
from ..numerics.checkpoint import save_params
from ..policy import TemperatureSchedule, anneal
from ..video.resize import resize_array
from .episode_grad import ESTIMATORS, episode_backward, episode_forward
from .losses import BALANCE_FORMS, LossReport, balance_loss_and_grad, cross_entropy
from .optim import SGD, clip_grad_norm, milestone_lr

log = logging.getLogger("clipforge.training")

# "video": each episode is balanced on its own and the losses are averaged;
# "batch": the balance term sees the action usage pooled over the batch
BALANCE_SCOPES = ("video", "batch")

HISTORY_HEADER = ["epoch", "phase", "L_c", "L_b", "L_g", "L", "accuracy", "flops_per_video"]


class TrainingDivergedError(FloatingPointError):
    def __init__(self, phase: int, epoch: int):
        super().__init__(f"non-finite loss in phase {phase}, epoch {epoch}")
        self.phase, self.epoch = phase, epoch


@dataclass(frozen=True)
class PhaseSchedule:
    epochs: int
    lr: float
    milestones: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.epochs < 0 or not self.lr > 0:
            raise ValueError("phase needs epochs >= 0 and a positive learning rate")


FULL_SCALE_PHASES = (
    PhaseSchedule(100, 0.01, (50, 70, 90)),
    PhaseSchedule(20, 1.45e-5),
    PhaseSchedule(20, 0.01),
)


@dataclass(frozen=True)
class TrainConfig:
    phase1: PhaseSchedule = PhaseSchedule(20, 0.03, (10, 14, 18))
    phase2: PhaseSchedule = PhaseSchedule(20, 0.1, (14,))
    phase3: PhaseSchedule = PhaseSchedule(25, 0.1)
    momentum: float = 0.937
    weight_decay: float = 5e-4
    frame_batch: int = 64
    phase1_all_resolutions: bool = False
    video_batch: int = 8
    seed: int = 0
    beta: float = 0.3
    gamma: float = 0.1
    tau_initial: float = 5.0
    tau_floor: float = 0.01
    balance_form: str = "abs"
    balance_scope: str = "video"
    estimator: str = "straight-through"
    train_classifier_phase3: bool = True
    # joint gradient norm cap for phase 2, which backpropagates through every frame; 0 disables
    grad_clip: float = 0.0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.balance_form not in BALANCE_FORMS:
            raise ValueError(f"balance_form must be one of {BALANCE_FORMS}")
        if self.balance_scope not in BALANCE_SCOPES:
            raise ValueError(f"balance_scope must be one of {BALANCE_SCOPES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if self.frame_batch < 1 or self.video_batch < 1 or self.threads < 1:
            raise ValueError("batch sizes and thread count must be >= 1")


@dataclass
class HistoryRow:
    epoch: int
    phase: int
    L_c: float
    L_b: float
    L_g: float
    L: float
    accuracy: float
    flops_per_video: float


@dataclass
class History:
    rows: list[HistoryRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for r in self.rows:
            writer.writerow([r.epoch, r.phase] + [repr(float(getattr(r, k))) for k in HISTORY_HEADER[2:]])
        return buf.getvalue()


def _check(phase: int, epoch: int, *values) -> None:
    if not np.all(np.isfinite(values)):
        raise TrainingDivergedError(phase, epoch)


def _ce(phase: int, epoch: int, logits, labels):
    try:
        return cross_entropy(logits, labels)
    except FloatingPointError as err:
        raise TrainingDivergedError(phase, epoch) from err


def _prefixed(prefix: str, layer) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in layer.named_params().items()}


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def baseline_flops(engine: Engine, videos) -> float:
    """Mean FLOPs/video of the always-k=1, full-resolution, policy-free runner."""
    return float(np.mean([len(v) * engine.step_flops(engine.full_resolution) for v in videos]))


def train_phase1(engine: Engine, videos, cfg: TrainConfig, history: History) -> None:
    """Frame classifier on top of the CNN at full resolution.

    With ``phase1_all_resolutions`` each batch uses the next resolution of the action space in turn.
    """
    pix = np.concatenate([v.pixels for v in videos]).astype(np.float64)
    labels = np.concatenate([v.frame_labels for v in videos]).astype(np.int64)
    keep = labels >= 0
    pix, labels = pix[keep], labels[keep]
    resolutions = engine.action_space.resolutions if cfg.phase1_all_resolutions else (engine.full_resolution,)
    scaled = {r: resize_array(pix, r) for r in resolutions}
    params = {**_prefixed("cnn", engine.cnn), **_prefixed("head", engine.head)}
    opt = SGD(params, cfg.phase1.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(labels)
    flops = baseline_flops(engine, videos)
    for epoch in range(cfg.phase1.epochs):
        opt.lr = milestone_lr(cfg.phase1.lr, epoch, cfg.phase1.milestones)
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.frame_batch)):
            idx = order[start : start + cfg.frame_batch]
            x = scaled[resolutions[b % len(resolutions)]][idx]
            feats, ccache = engine.cnn.forward_cached(x)
            logits, hcache = engine.head.forward_cached(feats)
            loss, dlogits = _ce(1, epoch, logits, labels[idx])
            _check(1, epoch, loss)
            ghead, dfeat = engine.head.backward(hcache, dlogits)
            gcnn, _ = engine.cnn.backward(ccache, dfeat)
            opt.step({**{f"cnn.{k}": v for k, v in gcnn.items()}, **{f"head.{k}": v for k, v in ghead.items()}})
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == labels[idx]))
        l_c = total / n
        history.rows.append(HistoryRow(epoch, 1, l_c, 0.0, 0.0, l_c, correct / n, flops))
        log.info("phase 1 epoch %d: L_c=%.4f frame acc=%.4f", epoch, l_c, correct / n)


def k1_inputs(features: np.ndarray) -> np.ndarray:
    """Per-step CNN inputs of the k = 1 runner: frame 0 twice, then frames 1 .. L-2."""
    return np.concatenate([features[:1], features[:-1]])


def _phase2_batch(engine: Engine, seqs: np.ndarray, labels: np.ndarray, epoch: int = 0):
    gru, fc = engine.gru, engine.fc
    b, steps, _ = seqs.shape
    h = np.zeros((b, engine.hidden_size))
    caches = []
    for t in range(steps):
        h, c = gru.forward_cached((seqs[:, t], h))
        caches.append(c)
    logits, fcache = fc.forward_cached(h)
    loss, dlogits = _ce(2, epoch, logits, labels)
    gfc, dh = fc.backward(fcache, dlogits)
    ggru = {k: np.zeros_like(v) for k, v in gru.params.items()}
    for c in reversed(caches):
        g, (_, dh) = gru.backward(c, dh)
        for k, v in g.items():
            ggru[k] += v
    grads = {f"fc.{k}": v for k, v in gfc.items()}
    grads.update({f"gru.{k}": v for k, v in ggru.items()})
    return loss, grads, np.argmax(logits, axis=1)


def train_phase2(engine: Engine, videos, cfg: TrainConfig, history: History) -> None:
    """GRU + video classifier over frozen full-resolution CNN features."""
    full = engine.full_resolution
    seqs = [k1_inputs(engine.features(v.pixels, full)) for v in videos]
    labels = np.array([v.label for v in videos])
    params = {**_prefixed("gru", engine.gru), **_prefixed("fc", engine.fc)}
    opt = SGD(params, cfg.phase2.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 2])
    flops = baseline_flops(engine, videos)
    n = len(videos)
    for epoch in range(cfg.phase2.epochs):
        opt.lr = milestone_lr(cfg.phase2.lr, epoch, cfg.phase2.milestones)
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, cfg.video_batch):
            idx = order[start : start + cfg.video_batch]
            # videos of different lengths are stepped separately and their gradients averaged
            groups: dict[int, list[int]] = {}
            for i in idx:
                groups.setdefault(len(seqs[i]), []).append(int(i))
            grads: dict[str, np.ndarray] = {}
            for members in groups.values():
                loss, g, pred = _phase2_batch(engine, np.stack([seqs[i] for i in members]), labels[members], epoch)
                _check(2, epoch, loss)
                w = len(members) / len(idx)
                for k, v in g.items():
                    grads[k] = grads.get(k, 0.0) + w * v
                total += loss * len(members)
                correct += int(np.sum(pred == labels[members]))
            clip_grad_norm(grads, cfg.grad_clip)
            opt.step(grads)
        l_c = total / n
        history.rows.append(HistoryRow(epoch, 2, l_c, 0.0, 0.0, l_c, correct / n, flops))
        log.info("phase 2 epoch %d: L_c=%.4f video acc=%.4f", epoch, l_c, correct / n)


def train_phase3(engine: Engine, videos, cfg: TrainConfig, history: History) -> None:
    """Policy on the total loss through the Gumbel-Softmax estimator."""
    params = _prefixed("policy", engine.policy)
    if cfg.train_classifier_phase3:
        params.update(_prefixed("fc", engine.fc))
    opt = SGD(params, cfg.phase3.lr, cfg.momentum, cfg.weight_decay)
    n = len(videos)
    per_epoch = -(-n // cfg.video_batch)
    schedule = TemperatureSchedule(cfg.tau_initial, cfg.tau_floor, max(cfg.phase3.epochs * per_epoch - 1, 0))
    order_rng = np.random.default_rng([cfg.seed, 3])
    step = 0
    for epoch in range(cfg.phase3.epochs):
        opt.lr = milestone_lr(cfg.phase3.lr, epoch, cfg.phase3.milestones)
        order = order_rng.permutation(n)
        sums = np.zeros(3)
        correct, flops = 0, 0
        for start in range(0, n, cfg.video_batch):
            idx = order[start : start + cfg.video_batch]
            tau = anneal(schedule, step)

            def forward(i, tau=tau):
                rng = np.random.default_rng([cfg.seed, 3, epoch, int(i)])
                try:
                    return episode_forward(videos[i], engine, rng, tau, cfg.estimator)
                except FloatingPointError as err:
                    raise TrainingDivergedError(3, epoch) from err

            tapes = _map(forward, idx, cfg.threads)
            if cfg.balance_scope == "batch":
                l_b, g = balance_loss_and_grad(np.mean([tp.usage for tp in tapes], axis=0), cfg.balance_form)
                balance = [(l_b, g)] * len(tapes)
            else:
                balance = [balance_loss_and_grad(tp.usage, cfg.balance_form) for tp in tapes]

            def backward(k):
                return episode_backward(
                    tapes[k], engine, cfg.beta * balance[k][1], cfg.gamma, cfg.train_classifier_phase3
                )

            grads = {k: np.zeros_like(v) for k, v in params.items()}
            for k, (i, tp) in enumerate(zip(idx, tapes)):
                report = LossReport(tp.l_c, balance[k][0], tp.l_g, cfg.beta, cfg.gamma)
                _check(3, epoch, report.total)
                sums += [report.L_c, report.L_b, report.L_g]
                correct += int(tp.predicted == videos[i].label)
                flops += tp.flops
            for g in _map(backward, range(len(tapes)), cfg.threads):
                for k, v in g.items():
                    grads[k] += v / len(idx)
            opt.step(grads)
            step += 1
        l_c, l_b, l_g = sums / n
        total = l_c + cfg.beta * l_b + cfg.gamma * l_g
        history.rows.append(HistoryRow(epoch, 3, l_c, l_b, l_g, total, correct / n, flops / n))
        log.info(
            "phase 3 epoch %d: L_c=%.4f L_b=%.4f L_g=%.4f acc=%.4f flops/video=%.0f",
            epoch, l_c, l_b, l_g, correct / n, flops / n,
        )


def train(
    videos,
    config: TrainConfig | None = None,
    engine: Engine | None = None,
    out_dir=None,
    start_phase: int = 1,
) -> tuple[Engine, History]:
    """Run phases ``start_phase`` .. 3, checkpointing each one into ``out_dir``."""
    cfg = config or TrainConfig()
    engine = engine or Engine()
    if not videos:
        raise ValueError("training needs at least one video")
    if start_phase not in (1, 2, 3):
        raise ValueError("start_phase must be 1, 2 or 3")
    history = History()
    phases = {1: train_phase1, 2: train_phase2, 3: train_phase3}
    for phase in range(start_phase, 4):
        phases[phase](engine, videos, cfg, history)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            save_params(engine.named_params(), Path(out_dir) / f"phase{phase}.clpf")
    return engine, history


@dataclass
class EvalResult:
    accuracy: float
    flops_per_video: float
    flops_per_frame: float
    usage: np.ndarray
    predictions: list[int]
    num_videos: int


def evaluate(engine: Engine, videos, policy=None, threads: int = 1) -> EvalResult:
    """Argmax-mode episodes: accuracy, mean FLOPs per video and per frame, action usage."""
    if not videos:
        raise ValueError("evaluation needs at least one video")

    def one(v):
        return run_episode(v, engine, mode="argmax", policy=policy)

    results = _map(one, videos, threads)
    h = np.array([r.h_final for r in results])
    preds = np.argmax(engine.fc.forward(h), axis=1)
    labels = np.array([v.label for v in videos])
    counts = np.zeros(len(engine.action_space))
    for r in results:
        for idx in r.action_indices:
            counts[idx] += 1
    per_frame = sum((r.ledger.per_frame for r in results), Fraction(0)) / len(results)
    return EvalResult(
        float(np.mean(preds == labels)),
        float(np.mean([r.ledger.total_video for r in results])),
        float(per_frame),
        counts / counts.sum(),
        [int(p) for p in preds],
        len(videos),
    )


def baseline_policy() -> FixedPolicy:
    """Always the smallest fuse count, at full resolution, without station points."""
    return FixedPolicy(0)
