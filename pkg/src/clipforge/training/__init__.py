"""Losses, the optimizer, the three-phase trainer and distilled-selection evaluation."""

from .distill import METHODS, DistillResult, distilled_accuracy, selected_indices
from .episode_grad import ESTIMATORS, EpisodeGradient, policy_episode
from .losses import (
    BALANCE_FORMS,
    LossReport,
    action_usage,
    balance_loss,
    balance_loss_and_grad,
    classification_loss,
    cross_entropy,
    flops_loss,
    total_loss,
)
from .optim import SGD, clip_grad_norm, milestone_lr
from .trainer import (
    FULL_SCALE_PHASES,
    EvalResult,
    History,
    HistoryRow,
    PhaseSchedule,
    TrainConfig,
    TrainingDivergedError,
    baseline_flops,
    baseline_policy,
    evaluate,
    train,
    train_phase1,
    train_phase2,
    train_phase3,
)

__all__ = [
    "BALANCE_FORMS",
    "ESTIMATORS",
    "METHODS",
    "FULL_SCALE_PHASES",
    "SGD",
    "clip_grad_norm",
    "DistillResult",
    "EpisodeGradient",
    "EvalResult",
    "History",
    "HistoryRow",
    "LossReport",
    "PhaseSchedule",
    "TrainConfig",
    "TrainingDivergedError",
    "action_usage",
    "balance_loss",
    "balance_loss_and_grad",
    "baseline_flops",
    "baseline_policy",
    "classification_loss",
    "cross_entropy",
    "distilled_accuracy",
    "evaluate",
    "flops_loss",
    "milestone_lr",
    "policy_episode",
    "selected_indices",
    "total_loss",
    "train",
    "train_phase1",
    "train_phase2",
    "train_phase3",
]
