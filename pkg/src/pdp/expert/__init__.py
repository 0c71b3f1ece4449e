"""PPO expert policies: the optimal-action oracle for data collection."""

from .nets import ExpertPolicy
from .ppo import (
    PpoConfig,
    RecoveryRewardConfig,
    TrackingRewardConfig,
    TrainingFailed,
    evaluate_pendulum_expert,
    evaluate_tracking_expert,
    gae,
    normalize_advantages,
    ppo_update,
    recovery_reward_batch,
    tracking_reward,
    tracking_reward_batch,
    train_pendulum_expert,
    train_tracking_expert,
)

__all__ = [
    "ExpertPolicy",
    "PpoConfig",
    "RecoveryRewardConfig",
    "TrackingRewardConfig",
    "TrainingFailed",
    "evaluate_pendulum_expert",
    "evaluate_tracking_expert",
    "gae",
    "normalize_advantages",
    "ppo_update",
    "recovery_reward_batch",
    "tracking_reward",
    "tracking_reward_batch",
    "train_pendulum_expert",
    "train_tracking_expert",
]
