"""Diffusion action policy, baselines, noise schedule, and persistence."""

from .checkpoint import CheckpointFormatError, load_expert, load_policy, save_expert, save_policy
from .networks import CvaeBaseline, DenoiserConfig, DenoiserNetwork, MlpPolicy
from .schedule import (
    NoiseSchedule,
    alpha_bar_closed_form,
    cosine_schedule,
    forward_diffuse,
    forward_diffuse_batch,
)
from .training import (
    POLICY_KINDS,
    PolicyBundle,
    StudentConfig,
    cvae_infer,
    cvae_train_step,
    diffusion_sample,
    diffusion_train_step,
    mlp_infer,
    mlp_train_step,
    train_policy,
)

__all__ = [
    "CheckpointFormatError",
    "CvaeBaseline",
    "DenoiserConfig",
    "DenoiserNetwork",
    "MlpPolicy",
    "NoiseSchedule",
    "POLICY_KINDS",
    "PolicyBundle",
    "StudentConfig",
    "alpha_bar_closed_form",
    "cosine_schedule",
    "cvae_infer",
    "cvae_train_step",
    "diffusion_sample",
    "diffusion_train_step",
    "forward_diffuse",
    "forward_diffuse_batch",
    "load_expert",
    "load_policy",
    "mlp_infer",
    "mlp_train_step",
    "save_expert",
    "save_policy",
    "train_policy",
]
