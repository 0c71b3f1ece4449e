"""Behavior-cloning dataset collection and serialization."""

from .collect import (
    STRATEGY_KINDS,
    ExpertTaskMismatch,
    SamplingStrategy,
    collect,
    collect_perturb,
    collect_tracking,
    recovery_episodes,
    tracking_recovery_episodes,
)
from .dataset import Dataset, DatasetFormatError, NormStats, Transition, WindowError

__all__ = [
    "Dataset",
    "DatasetFormatError",
    "ExpertTaskMismatch",
    "NormStats",
    "STRATEGY_KINDS",
    "SamplingStrategy",
    "Transition",
    "WindowError",
    "collect",
    "collect_perturb",
    "collect_tracking",
    "recovery_episodes",
    "tracking_recovery_episodes",
]
