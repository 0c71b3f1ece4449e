"""CLI and experiment orchestration."""

from .ablations import ablate_noise_horizon, ablate_strategy, latent_traversal_variance, mirrored_large_kicks, run_baselines
from .config import (
    ConfigError,
    DEFAULTS,
    ExperimentConfig,
    apply_overrides,
    default_config,
    load_config,
    parse_config_text,
)
from .pipeline import MissingArtifact, Pipeline, run_pipeline

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "ExperimentConfig",
    "MissingArtifact",
    "Pipeline",
    "ablate_noise_horizon",
    "ablate_strategy",
    "apply_overrides",
    "default_config",
    "latent_traversal_variance",
    "load_config",
    "mirrored_large_kicks",
    "parse_config_text",
    "run_baselines",
    "run_pipeline",
]
