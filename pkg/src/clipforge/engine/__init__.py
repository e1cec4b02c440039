"""Clip mixup, station points, the CNN+GRU feature extractor and the episode runner."""

from .episode import (
    EpisodeResult,
    FixedPolicy,
    FlopsLedger,
    StepCost,
    TraceStep,
    run_episode,
    trace_csv,
)
from .mixup import clip_mixup, sample_lambda
from .model import Engine, EngineConfig, FeatureStep, FrameCNN, step_features
from .stations import (
    StationPointSet,
    extract_station_points,
    nearest_future_station,
    station_indices,
)

__all__ = [
    "Engine",
    "EngineConfig",
    "EpisodeResult",
    "FeatureStep",
    "FixedPolicy",
    "FlopsLedger",
    "FrameCNN",
    "StationPointSet",
    "StepCost",
    "TraceStep",
    "clip_mixup",
    "extract_station_points",
    "nearest_future_station",
    "run_episode",
    "sample_lambda",
    "station_indices",
    "step_features",
    "trace_csv",
]
