"""Command-line front end: corpus generation, training, selection, evaluation and reports.

Every command reads an optional flat ``key = value`` config file.  Outputs land
under ``--out`` and are byte-identical for identical config and seed.

Exit codes: 0 success, 1 usage or config error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .detection.io import (
    DetectionFormatError,
    load_detection_sets,
    pr_curve_csv,
    write_text,
)
from .detection.metrics import f1_at, map50
from .engine.episode import run_episode
from .engine.model import Engine, EngineConfig
from .numerics.checkpoint import CheckpointError, load_params
from .policy import ActionSpace
from .selection import VARIANTS, score_video, scores_csv, select_frames
from .training.episode_grad import ESTIMATORS
from .training.losses import BALANCE_FORMS
from .training.trainer import (
    BALANCE_SCOPES,
    PhaseSchedule,
    TrainConfig,
    TrainingDivergedError,
    baseline_policy,
    evaluate,
    train,
)
from .video.io import VideoFormatError, load_corpus, save_corpus
from .video.synthetic import SyntheticCorpusSpec, generate_corpus

log = logging.getLogger("clipforge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
TEST_SEED_OFFSET = 1000


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


def _optional_pair(text: str):
    if text.strip().lower() == "none":
        return None
    pair = _ints(text)
    if len(pair) != 2:
        raise ValueError("expected two comma-separated integers or 'none'")
    return pair


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError("expected true or false")


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


@dataclass(frozen=True)
class RunConfig:
    # corpus
    train_videos: int = 60
    test_videos: int = 60
    frames_per_video: int = 64
    frame_size: int = 32
    channels: int = 3
    blob_duration: tuple[int, int] | None = (6, 14)
    # model
    actions: tuple[int, ...] = (1, 3, 5, 7)
    resolutions: tuple[int, ...] = (32, 24, 16, 12)
    station_count: int = 2
    alpha: float = 0.3
    hidden_size: int = 64
    cnn_widths: tuple[int, ...] = (8, 16, 32)
    cnn_norm_groups: int = 4
    attention: str = "none"
    policy_groups: int = 8
    # losses and policy training
    beta: float = 0.3
    gamma: float = 0.1
    tau_initial: float = 5.0
    tau_floor: float = 0.01
    balance_form: str = "abs"
    balance_scope: str = "video"
    estimator: str = "straight-through"
    train_classifier_phase3: bool = True
    # schedules
    phase1_epochs: int = 20
    phase1_lr: float = 0.03
    phase1_milestones: tuple[int, ...] = (10, 14, 18)
    phase1_all_resolutions: bool = False
    phase2_epochs: int = 20
    phase2_lr: float = 0.1
    phase2_milestones: tuple[int, ...] = (14,)
    phase3_epochs: int = 25
    phase3_lr: float = 0.1
    phase3_milestones: tuple[int, ...] = ()
    momentum: float = 0.937
    weight_decay: float = 5e-4
    grad_clip: float = 0.0
    frame_batch: int = 64
    video_batch: int = 8
    # selection
    budget: int = 8
    variant: str = "S1"
    # run
    seed: int = 0
    threads: int = 1

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            channels=self.channels,
            cnn_widths=self.cnn_widths,
            cnn_norm_groups=self.cnn_norm_groups,
            hidden_size=self.hidden_size,
            attention=self.attention,
            action_space=ActionSpace(self.actions, self.resolutions),
            station_count=self.station_count,
            alpha=self.alpha,
            policy_groups=self.policy_groups,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            phase1=PhaseSchedule(self.phase1_epochs, self.phase1_lr, self.phase1_milestones),
            phase2=PhaseSchedule(self.phase2_epochs, self.phase2_lr, self.phase2_milestones),
            phase3=PhaseSchedule(self.phase3_epochs, self.phase3_lr, self.phase3_milestones),
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
            frame_batch=self.frame_batch,
            video_batch=self.video_batch,
            phase1_all_resolutions=self.phase1_all_resolutions,
            seed=self.seed,
            beta=self.beta,
            gamma=self.gamma,
            tau_initial=self.tau_initial,
            tau_floor=self.tau_floor,
            balance_form=self.balance_form,
            balance_scope=self.balance_scope,
            estimator=self.estimator,
            train_classifier_phase3=self.train_classifier_phase3,
            threads=self.threads,
        )

    def corpus_spec(self, split: str) -> SyntheticCorpusSpec:
        count, seed = (
            (self.train_videos, self.seed) if split == "train" else (self.test_videos, self.seed + TEST_SEED_OFFSET)
        )
        return SyntheticCorpusSpec(
            num_videos=count,
            frames_per_video=self.frames_per_video,
            frame_size=self.frame_size,
            channels=self.channels,
            blob_duration=self.blob_duration,
            rng_seed=seed,
        )


_PARSERS = {
    "blob_duration": _optional_pair,
    "actions": _ints,
    "resolutions": _ints,
    "cnn_widths": _ints,
    "phase1_milestones": _ints,
    "phase2_milestones": _ints,
    "phase3_milestones": _ints,
    "balance_form": _choice(BALANCE_FORMS),
    "balance_scope": _choice(BALANCE_SCOPES),
    "estimator": _choice(ESTIMATORS),
    "variant": _choice(VARIANTS),
    "attention": _choice(("none", "cbam", "eca", "sa")),
}


def _parser_for(f) -> callable:
    if f.name in _PARSERS:
        return _PARSERS[f.name]
    return {"int": int, "float": float, "bool": _bool, "str": str}[f.type]


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _parser_for(known[key])(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    cfg = RunConfig(**values)
    try:
        cfg.engine_config()
        cfg.train_config()
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path, seed: int | None = None, threads: int | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = parse_config(text, str(path))
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        overrides["threads"] = threads
    return replace(cfg, **overrides)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_text(buf.getvalue(), path)


def _fmt(x: float) -> str:
    return repr(float(x))


def _corpus(out: Path, split: str, override=None):
    manifest = Path(override) if override else out / "corpus" / split / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"corpus manifest {manifest} not found; run 'clipforge gen' first")
    return load_corpus(manifest)


def _engine(cfg: RunConfig, checkpoint) -> Engine:
    engine = Engine(cfg.engine_config())
    path = Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    engine.load_params(load_params(path))
    return engine


def cmd_gen(cfg: RunConfig, out: Path, args) -> int:
    for split in ("train", "test"):
        videos = generate_corpus(cfg.corpus_spec(split))
        manifest = save_corpus(videos, out / "corpus" / split)
        pos = sum(v.label for v in videos)
        print(f"{split}: {len(videos)} videos ({pos} positive, {len(videos) - pos} negative) -> {manifest}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    videos = _corpus(out, "train", args.corpus)
    ckpt_dir = out / "checkpoints"
    if args.resume:
        engine = _engine(cfg, args.resume)
        engine, history = train(videos, cfg.train_config(), engine, ckpt_dir, start_phase=3)
    else:
        engine, history = train(videos, cfg.train_config(), Engine(cfg.engine_config()), ckpt_dir)
    write_text(history.to_csv(), out / "history.csv")
    print(f"trained on {len(videos)} videos; checkpoints in {ckpt_dir}, history in {out / 'history.csv'}")
    return EXIT_OK


def cmd_select(cfg: RunConfig, out: Path, args) -> int:
    engine = _engine(cfg, args.checkpoint or out / "checkpoints" / "phase3.clpf")
    videos = _corpus(out, args.split, args.corpus)
    budget = cfg.budget if args.budget is None else args.budget
    variant = args.variant or cfg.variant
    dest = out / "selected" / variant
    kept = []
    for v in videos:
        if not 1 <= budget <= len(v):
            raise ConfigError(f"budget {budget} outside [1, {len(v)}] for video {v.source_id}")
        # S3 draws its Gumbel noise from a per-video stream so results do not depend on order
        rng = np.random.default_rng([cfg.seed, 4, len(kept)])
        scores = score_video(v, engine, variant, rng=rng)
        write_text(scores_csv(scores, variant), dest / "scores" / f"{v.source_id}.csv")
        kept.append(select_frames(v, scores, budget))
    manifest = save_corpus(kept, dest)
    print(f"selected {budget} frames from each of {len(kept)} videos with {variant} -> {manifest}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path, args) -> int:
    engine = _engine(cfg, args.checkpoint or out / "checkpoints" / "phase3.clpf")
    videos = _corpus(out, args.split, args.corpus)
    mode = "baseline" if args.baseline else "policy"
    res = evaluate(engine, videos, baseline_policy() if args.baseline else None, threads=cfg.threads)
    dest = out / "eval"
    _write_csv(
        dest / f"{args.split}_{mode}.csv",
        ["split", "mode", "num_videos", "accuracy", "flops_per_video", "flops_per_frame"],
        [[args.split, mode, res.num_videos, _fmt(res.accuracy), _fmt(res.flops_per_video), _fmt(res.flops_per_frame)]],
    )
    space = engine.action_space
    _write_csv(
        dest / f"{args.split}_{mode}_usage.csv",
        ["action", "resolution", "fraction"],
        [[a, r, _fmt(u)] for a, r, u in zip(space.actions, space.resolutions, res.usage)],
    )
    print(
        f"{mode} on {args.split}: accuracy {res.accuracy:.4f}, "
        f"{res.flops_per_video:.0f} FLOPs/video, {res.flops_per_frame:.1f} FLOPs/frame"
    )
    return EXIT_OK


def cmd_detect_eval(cfg: RunConfig, out: Path, args) -> int:
    sets = load_detection_sets(args.gt, args.pred)
    result = map50(sets)
    f1 = f1_at(sets, args.threshold)
    rows = [[f"ap50_class_{c}", _fmt(curve.ap)] for c, curve in sorted(result.per_class.items())]
    rows += [["map50", _fmt(result.mean_ap)], [f"f1_at_{args.threshold:g}", _fmt(f1)]]
    dest = out / "detect"
    _write_csv(dest / "metrics.csv", ["metric", "value"], rows)
    write_text(pr_curve_csv(result), dest / "pr_curve.csv")
    print(f"mAP@50 {result.mean_ap:.4f}, F1 {f1:.4f} over {len(sets)} images")
    return EXIT_OK


def cmd_flops_report(cfg: RunConfig, out: Path, args) -> int:
    engine = Engine(cfg.engine_config())
    space = engine.action_space
    full = engine.full_resolution
    rows = [
        [a, r, engine.cnn_flops(r), engine.gru_flops(), engine.step_flops(r), engine.policy_flops()]
        for a, r in zip(space.actions, space.resolutions)
    ]
    dest = out / "flops"
    _write_csv(
        dest / "costs.csv", ["action", "resolution", "cnn_flops", "gru_flops", "step_flops", "policy_flops"], rows
    )
    _write_csv(
        dest / "baseline.csv",
        ["frames", "station_flops", "baseline_flops_per_video"],
        [[cfg.frames_per_video, cfg.station_count * engine.cnn_flops(full), cfg.frames_per_video * engine.step_flops(full)]],
    )
    if args.checkpoint:
        engine = _engine(cfg, args.checkpoint)
        videos = _corpus(out, args.split, args.corpus)
        per_video = []
        for v in videos:
            r = run_episode(v, engine, mode="argmax")
            per_video.append([v.source_id, len(r.trace), r.ledger.total_video, _fmt(r.ledger.per_frame)])
        _write_csv(dest / f"{args.split}_ledger.csv", ["video_id", "steps", "flops_video", "flops_frame"], per_video)
    print(f"FLOPs report written to {dest}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "select": cmd_select,
    "eval": cmd_eval,
    "detect-eval": cmd_detect_eval,
    "flops-report": cmd_flops_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads for per-video work (default 1)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")

    parser = _Parser(prog="clipforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="write the synthetic train/test corpus")
    p = sub.add_parser("train", parents=[common], help="three-phase training")
    p.add_argument("--corpus", help="training manifest (default OUT/corpus/train/manifest.csv)")
    p.add_argument("--resume", help="phase-2 checkpoint; runs phase 3 only")
    for name, helptext in (("select", "score frames and write distilled videos"), ("eval", "accuracy and FLOPs")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", help="engine checkpoint (default OUT/checkpoints/phase3.clpf)")
        p.add_argument("--split", default="test", choices=("train", "test"))
        p.add_argument("--corpus", help="manifest to use instead of the split's")
    sub.choices["select"].add_argument("--budget", type=int, help="frames kept per video")
    sub.choices["select"].add_argument("--variant", choices=VARIANTS)
    sub.choices["eval"].add_argument("--baseline", action="store_true", help="always k=1 at full resolution")
    p = sub.add_parser("detect-eval", parents=[common], help="AP, mAP@50, F1 and P-R curves")
    p.add_argument("gt", help="ground-truth CSV")
    p.add_argument("pred", help="prediction CSV")
    p.add_argument("--threshold", type=float, default=0.5, help="confidence threshold for F1")
    p = sub.add_parser("flops-report", parents=[common], help="closed-form costs and per-video ledgers")
    p.add_argument("--checkpoint", help="also run argmax episodes and write per-video ledgers")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--corpus", help="manifest to use instead of the split's")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("CLIPFORGE_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"CLIPFORGE_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.seed, args.threads)
    except ConfigError as exc:
        print(f"clipforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"clipforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"clipforge: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (
        FileNotFoundError,
        DetectionFormatError,
        VideoFormatError,
        CheckpointError,
        KeyError,
        ValueError,
        FloatingPointError,
        OSError,
    ) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"clipforge: error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
