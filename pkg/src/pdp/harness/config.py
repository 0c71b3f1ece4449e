"""Flat key-value experiment configuration with dotted sections.

Files are UTF-8 text, one `key = value` per line, `#` comments. Every key
has a documented default below; unknown keys are rejected with the exact
field path. Values are typed by their defaults (int, float, bool, str, or
comma-separated tuples thereof).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

APPLICATIONS = ("perturb", "track", "token_gen")


class ConfigError(ValueError):
    def __init__(self, msg: str, field: str = ""):
        super().__init__(msg)
        self.field = field


# key -> (default, documentation)
DEFAULTS: dict[str, tuple[object, str]] = {
    "application": ("perturb", "one of perturb | track | token_gen"),
    "seeds": ((0, 1, 2), "student training seeds; evaluations derive their own streams"),
    # pendulum environment
    "env.dt": (0.02, "control timestep, seconds (50 Hz)"),
    "env.gravity": (9.81, "gravitational acceleration"),
    "env.length": (1.0, "pendulum length"),
    "env.mass": (1.0, "pendulum mass"),
    "env.damping": (0.1, "viscous damping coefficient"),
    "env.torque_limit": (7.0, "actuator bound; direct-recovery cone ~0.8 rad"),
    "env.kick_scale": (150.0, "perturbation torque at magnitude 1.0"),
    "env.kick_steps": (5, "perturbation window length, steps"),
    "env.id_low": (0.075, "low ID kick magnitude (fraction of kick_scale)"),
    "env.id_high": (0.15, "high ID kick magnitude"),
    "env.id_onset": (1.0, "canonical ID kick onset, seconds"),
    "env.ood_onset_min": (0.0, "OOD onset lower bound, seconds"),
    "env.ood_onset_max": (2.0, "OOD onset upper bound, seconds"),
    "env.post_onset_window": (6.0, "success window after the kick, seconds"),
    "env.fall_angle": (math.pi / 2, "beyond this |angle| counts toward falling"),
    "env.fall_hold": (0.5, "seconds beyond fall_angle that count as fallen"),
    "env.fall_spin_windings": (1.5, "net revolutions since onset that count as fallen"),
    "env.upright_band": (0.2, "|angle| defining recovery re-entry"),
    # point-mass environment
    "pm.dt": (0.02, "control timestep, seconds"),
    "pm.mass": (1.0, "point mass"),
    "pm.damping": (0.5, "velocity damping"),
    "pm.force_limit": (5.0, "per-component force bound"),
    "pm.fail_threshold": (0.5, "tracking failure distance, length units"),
    # reference motions
    "motions.families": (("line", "circle", "fig8", "zigzag"), "motion families to generate"),
    "motions.count_per_family": (8, "references per family"),
    "motions.duration": (4.0, "reference duration, seconds"),
    "motions.seed": (0, "library generation seed"),
    "motions.test_every": (4, "every k-th index goes to the test split"),
    # expert training
    "expert.seed": (10, "base seed; task index offsets it"),
    "expert.iterations": (400, "max PPO iterations"),
    "expert.num_envs": (16, "parallel rollout environments"),
    "expert.horizon_length": (64, "steps per environment per iteration"),
    "expert.mini_epochs": (6, "PPO epochs per batch"),
    "expert.batch_size": (256, "PPO minibatch size"),
    "expert.actor_lr": (3e-4, "actor learning rate"),
    "expert.critic_lr": (1e-3, "critic learning rate"),
    "expert.exploration_noise": (0.3, "Gaussian action std, normalized units"),
    "expert.gamma": (0.99, "discount"),
    "expert.lam": (0.95, "GAE trace"),
    "expert.clip": (0.2, "PPO clip range"),
    "expert.success_criterion": (0.9, "pendulum ID success required per cell"),
    "expert.error_criterion": (0.05, "tracking mean error required per family"),
    # data collection
    "collect.strategy": ("NoisyClean", "CleanClean | NoisyNoisy | NoisyClean"),
    "collect.noise_level": (0.12, "action-space sigma, normalized units"),
    "collect.transitions_per_task": (6000, "kick/tracking transitions per task cell"),
    "collect.recovery_frac": (0.3, "recovery-episode transitions as a fraction of each task's shard"),
    "collect.recovery_length": (200, "recovery episode length, steps"),
    "collect.max_transitions": (100000, "hard cap on dataset size"),
    "collect.seed": (100, "collection stream seed"),
    # student policy
    "student.kind": ("diffusion", "diffusion | mlp | cvae"),
    "student.obs_history": (4, "observation window T_o"),
    "student.horizon": (1, "action prediction horizon T_a"),
    "student.model_dim": (64, "transformer width"),
    "student.n_heads": (4, "attention heads"),
    "student.enc_layers": (2, "encoder layers"),
    "student.dec_layers": (2, "decoder layers"),
    "student.dropout": (0.1, "attention dropout, training only"),
    "student.mlp_ratio": (2, "transformer feed-forward expansion"),
    "student.diffusion_steps": (15, "denoising steps K (paper-scale: 100)"),
    "student.schedule_shift": (0.008, "cosine schedule shift s"),
    "student.clip_x0": (3.0, "sampler clip on the implied clean action"),
    "student.unscaled_forward": (False, "literal additive noising variant, comparison only"),
    "student.train_steps": (2500, "optimizer steps"),
    "student.batch_size": (48, "window minibatch size"),
    "student.lr": (1e-4, "AdamW learning rate"),
    "student.weight_decay": (1e-3, "decoupled weight decay"),
    "student.warmup": (100, "linear learning-rate warmup steps"),
    "student.mlp_hidden": ((256, 256), "baseline MLP hidden sizes"),
    "student.cvae_hidden": ((256, 256), "C-VAE encoder/decoder hidden sizes"),
    "student.cvae_latent": (4, "C-VAE latent dimension"),
    "student.cvae_beta": (1e-3, "C-VAE KL weight"),
    # evaluation
    "eval.n_episodes": (100, "episodes per ID/OOD evaluation"),
    "eval.seed": (500, "evaluation stream seed"),
    "eval.exec_steps": (1, "actions executed per plan (re-plan cadence)"),
    "eval.mm_magnitude": (0.30, "large mirrored kick magnitude for the multimodality protocol"),
    "eval.mm_rollouts": (200, "rollouts for the recovery-mode histogram"),
    # ablations
    "ablate.noise_levels": ((0.0, 0.08, 0.12, 0.16), "noise sweep (horizon fixed at ablate.noise_horizon)"),
    "ablate.noise_horizon": (6, "horizon used by the noise sweep"),
    "ablate.horizons": ((1, 6, 9, 12), "horizon sweep (noise fixed at collect.noise_level)"),
    "ablate.cvae_betas": ((1e-4, 1e-2, 1.0), "C-VAE KL weights for the baseline sweep"),
}


def _parse_scalar(raw: str, template, field: str):
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"invalid value for {field}: {e}", field) from None


def _parse_value(raw: str, default, field: str):
    if isinstance(default, tuple):
        template = default[0] if default else ""
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(_parse_scalar(p, template, field) for p in parts)
    return _parse_scalar(raw, default, field)


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def section(self, prefix: str) -> dict:
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def to_text(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def json_values(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.values.items()}


def default_config() -> ExperimentConfig:
    return ExperimentConfig({k: v for k, (v, _) in DEFAULTS.items()})


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = default_config() if base is None else ExperimentConfig(dict(base.values))
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}", field=key)
        cfg.values[key] = _parse_value(raw, DEFAULTS[key][0], key)
    validate(cfg)
    return cfg


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config_text(fh.read())
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    out = ExperimentConfig(dict(cfg.values))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, raw = (s.strip() for s in ov.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}", field=key)
        out.values[key] = _parse_value(raw, DEFAULTS[key][0], key)
    validate(out)
    return out


def validate(cfg: ExperimentConfig) -> None:
    if cfg["application"] not in APPLICATIONS:
        raise ConfigError(f"application must be one of {APPLICATIONS}, got {cfg['application']!r}", "application")
    if cfg["collect.strategy"] not in ("CleanClean", "NoisyNoisy", "NoisyClean"):
        raise ConfigError(f"bad strategy {cfg['collect.strategy']!r}", "collect.strategy")
    if cfg["student.kind"] not in ("diffusion", "mlp", "cvae"):
        raise ConfigError(f"bad student kind {cfg['student.kind']!r}", "student.kind")
    if not cfg["seeds"]:
        raise ConfigError("seeds must be nonempty", "seeds")
    for key in ("student.diffusion_steps", "student.train_steps", "eval.n_episodes"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1", key)


def describe_defaults() -> str:
    lines = ["# all keys with defaults and documentation"]
    for k, (v, doc) in DEFAULTS.items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}  # {doc}")
    return "\n".join(lines) + "\n"
