"""Deterministic toy control environments."""

from .base import EnvState, NonFiniteActionError, OffsetBoundsError, Perturbation, TaskSpec
from .motions import (
    FAMILIES,
    MotionLibraryConfig,
    ReferenceMotion,
    circle_analytic_velocity,
    motion_library,
    split_library,
)
from .pendulum import (
    FallTracker,
    PendulumBatch,
    PendulumConfig,
    PendulumEnv,
    fallen_mask,
    id_cells,
    make_batch,
    mechanical_energy,
    sample_perturbation,
    scripted_recovery_torque,
    wrap_angle,
)
from .pointmass import (
    TOKEN_OBS_DIM,
    TRACK_OBS_DIM,
    PointMassBatch,
    PointMassConfig,
    PointMassEnv,
    token_obs_batch,
    track_obs_batch,
)

__all__ = [
    "EnvState",
    "FallTracker",
    "FAMILIES",
    "MotionLibraryConfig",
    "NonFiniteActionError",
    "OffsetBoundsError",
    "PendulumBatch",
    "PendulumConfig",
    "PendulumEnv",
    "Perturbation",
    "PointMassBatch",
    "PointMassConfig",
    "PointMassEnv",
    "ReferenceMotion",
    "TaskSpec",
    "TOKEN_OBS_DIM",
    "TRACK_OBS_DIM",
    "circle_analytic_velocity",
    "fallen_mask",
    "id_cells",
    "make_batch",
    "mechanical_energy",
    "motion_library",
    "sample_perturbation",
    "scripted_recovery_torque",
    "split_library",
    "token_obs_batch",
    "track_obs_batch",
    "wrap_angle",
]
