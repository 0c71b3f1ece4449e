"""Expert rollouts under the three sampling strategies.

NoisyClean executes noisy actions but stores the expert's deterministic
mean for the visited state (a corrective action); NoisyNoisy stores what it
executed; CleanClean executes and stores the mean. Noise is i.i.d. Gaussian
per step in normalized action units, clipped with the action bounds after
addition. Recovery episodes start from random state offsets and record the
expert recovering, widening the noise band around clean trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs import FallTracker, PendulumConfig, Perturbation, PointMassConfig, ReferenceMotion, TaskSpec, wrap_angle
from ..expert.nets import ExpertPolicy
from ..numerics import Rng
from .dataset import Dataset

STRATEGY_KINDS = ("CleanClean", "NoisyNoisy", "NoisyClean")


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str
    noise_level: float = 0.0  # action-space std, normalized units

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown sampling strategy {self.kind!r}; known: {STRATEGY_KINDS}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")

    @property
    def sigma(self) -> float:
        """Execution noise; CleanClean forces it to zero."""
        return 0.0 if self.kind == "CleanClean" else self.noise_level


def _strategy_actions(expert: ExpertPolicy, obs: np.ndarray, strategy: SamplingStrategy, rng: Rng):
    """Normalized (stored, executed) per the strategy semantics."""
    mean = expert.mean(obs)
    sigma = strategy.sigma
    if sigma == 0.0:
        return mean, mean
    noisy = np.clip(mean + sigma * rng.normal(mean.shape), -1.0, 1.0)
    if strategy.kind == "NoisyNoisy":
        return noisy, noisy
    return mean, noisy  # NoisyClean


class ExpertTaskMismatch(ValueError):
    pass


def _check_expert(expert: ExpertPolicy, marker: str) -> None:
    if marker not in expert.task_subset_id:
        raise ExpertTaskMismatch(f"expert {expert.task_subset_id!r} was not trained for task {marker!r}")


# ---------------------------------------------------------------------------
# perturbation-recovery collection
# ---------------------------------------------------------------------------


def collect_perturb(
    expert: ExpertPolicy,
    env_cfg: PendulumConfig,
    cell: Perturbation,
    strategy: SamplingStrategy,
    rng: Rng,
    max_transitions: int,
    episodes_per_batch: int = 16,
) -> Dataset:
    """Kick episodes for one ID cell, episodes cut on env failure."""
    _check_expert(expert, f"m={cell.magnitude},d={cell.direction}")
    ds = Dataset(
        obs_dim=4,
        act_dim=1,
        provenance={
            "app": "perturb",
            "strategy": strategy.kind,
            "noise_level": strategy.noise_level,
            "expert": expert.task_subset_id,
            "cell": [cell.magnitude, cell.direction],
        },
    )
    onset_step = int(round(cell.onset_time / env_cfg.dt))
    n_steps = onset_step + int(env_cfg.post_onset_window / env_cfg.dt)
    while ds.n_transitions < max_transitions:
        b = episodes_per_batch
        theta = (2 * rng.uniform((b,)) - 1) * env_cfg.reset_angle_jitter
        omega = (2 * rng.uniform((b,)) - 1) * env_cfg.reset_vel_jitter
        unwrapped = theta.copy()
        tracker = FallTracker(env_cfg, b)
        alive = np.ones(b, dtype=bool)
        cut = np.full(b, n_steps, dtype=np.int64)
        obs_seq = np.zeros((n_steps, b, 4))
        sto_seq = np.zeros((n_steps, b, 1))
        exe_seq = np.zeros((n_steps, b, 1))
        for t in range(n_steps):
            active = float(onset_step <= t < onset_step + cell.duration)
            obs = np.stack([np.sin(theta), np.cos(theta), omega, np.full(b, active)], axis=1)
            stored_n, exec_n = _strategy_actions(expert, obs, strategy, rng)
            obs_seq[t] = obs
            sto_seq[t] = expert.env_action(stored_n)
            exe_seq[t] = expert.env_action(exec_n)
            kick = cell.magnitude * env_cfg.kick_scale * cell.direction * active
            u = np.clip(exe_seq[t][:, 0], -env_cfg.torque_limit, env_cfg.torque_limit) + kick
            omega = omega + env_cfg.dt * (
                (env_cfg.gravity / env_cfg.length) * np.sin(theta) + u / env_cfg.inertia - env_cfg.damping * omega
            )
            delta = env_cfg.dt * omega
            unwrapped = unwrapped + delta
            theta = wrap_angle(theta + delta)
            fell = tracker.update(theta, unwrapped)
            newly = alive & fell
            cut[newly] = t + 1
            alive &= ~fell
        for i in range(b):
            ln = int(cut[i])
            ds.add_episode(obs_seq[:ln, i], sto_seq[:ln, i], exe_seq[:ln, i], "perturb_recover")
            if ds.n_transitions >= max_transitions:
                break
    return ds


def recovery_episodes(
    expert: ExpertPolicy,
    env_cfg: PendulumConfig,
    offset_dist: tuple[float, float],
    rng: Rng,
    count: int,
    strategy: SamplingStrategy = SamplingStrategy("CleanClean"),
    length: int = 50,
) -> Dataset:
    """Short recovery episodes from random state offsets, no kick.

    offset_dist = (max |theta|, max |omega|) for the uniform init draws.
    """
    max_th, max_om = offset_dist
    if max_th > env_cfg.max_offset_angle or max_om > env_cfg.max_offset_vel:
        raise ValueError(f"offset_dist {offset_dist} outside env bounds")
    ds = Dataset(
        obs_dim=4,
        act_dim=1,
        provenance={
            "app": "perturb",
            "strategy": strategy.kind,
            "noise_level": strategy.noise_level,
            "expert": expert.task_subset_id,
            "recovery": True,
        },
    )
    b = count
    theta = wrap_angle((2 * rng.uniform((b,)) - 1) * max_th)
    omega = (2 * rng.uniform((b,)) - 1) * max_om
    obs_seq = np.zeros((length, b, 4))
    sto_seq = np.zeros((length, b, 1))
    exe_seq = np.zeros((length, b, 1))
    for t in range(length):
        obs = np.stack([np.sin(theta), np.cos(theta), omega, np.zeros(b)], axis=1)
        stored_n, exec_n = _strategy_actions(expert, obs, strategy, rng)
        obs_seq[t] = obs
        sto_seq[t] = expert.env_action(stored_n)
        exe_seq[t] = expert.env_action(exec_n)
        u = np.clip(exe_seq[t][:, 0], -env_cfg.torque_limit, env_cfg.torque_limit)
        omega = omega + env_cfg.dt * (
            (env_cfg.gravity / env_cfg.length) * np.sin(theta) + u / env_cfg.inertia - env_cfg.damping * omega
        )
        theta = wrap_angle(theta + env_cfg.dt * omega)
    for i in range(b):
        ds.add_episode(obs_seq[:, i], sto_seq[:, i], exe_seq[:, i], "perturb_recover")
    return ds


# ---------------------------------------------------------------------------
# tracking / token-generation collection
# ---------------------------------------------------------------------------


def collect_tracking(
    expert: ExpertPolicy,
    env_cfg: PointMassConfig,
    refs: list[ReferenceMotion],
    strategy: SamplingStrategy,
    rng: Rng,
    max_transitions: int,
    store_token_obs: bool = False,
    tokens: list[int] | None = None,
    init_jitter: float = 0.05,
) -> Dataset:
    """Expert tracks references; stores either the tracking observation or,
    for the token-generation application, the bare (position, velocity) view."""
    _check_expert(expert, refs[0].family)
    obs_dim = 4 if store_token_obs else 8
    kind = "token_generate" if store_token_obs else "track"
    ds = Dataset(
        obs_dim=obs_dim,
        act_dim=2,
        provenance={
            "app": "token_gen" if store_token_obs else "track",
            "strategy": strategy.kind,
            "noise_level": strategy.noise_level,
            "expert": expert.task_subset_id,
            "families": sorted({r.family for r in refs}),
        },
    )
    n = min(len(r) for r in refs)
    ep = 0
    while ds.n_transitions < max_transitions:
        ref = refs[ep % len(refs)]
        token = tokens[ep % len(refs)] if tokens else -1
        ep += 1
        pos = ref.positions[0] + (2 * rng.uniform((2,)) - 1) * init_jitter
        vel = ref.velocities[0] + (2 * rng.uniform((2,)) - 1) * init_jitter
        rows_obs, rows_sto, rows_exe = [], [], []
        for k in range(n - 1):
            track_obs = np.concatenate(
                [ref.positions[k] - pos, ref.velocities[k] - vel, ref.positions[k + 1] - pos, ref.velocities[k + 1]]
            )[None, :]
            stored_n, exec_n = _strategy_actions(expert, track_obs, strategy, rng)
            rows_obs.append(np.concatenate([pos, vel]) if store_token_obs else track_obs[0])
            rows_sto.append(expert.env_action(stored_n[0]))
            rows_exe.append(expert.env_action(exec_n[0]))
            u = np.clip(rows_exe[-1], -env_cfg.force_limit, env_cfg.force_limit)
            vel = vel + env_cfg.dt * (u / env_cfg.mass - env_cfg.damping * vel)
            pos = pos + env_cfg.dt * vel
            if np.linalg.norm(ref.positions[k + 1] - pos) > env_cfg.fail_threshold:
                break
        ds.add_episode(np.asarray(rows_obs), np.asarray(rows_sto), np.asarray(rows_exe), kind, token)
    return ds


def tracking_recovery_episodes(
    expert: ExpertPolicy,
    env_cfg: PointMassConfig,
    refs: list[ReferenceMotion],
    rng: Rng,
    count: int,
    strategy: SamplingStrategy = SamplingStrategy("CleanClean"),
    length: int = 50,
    offset_pos: float = 0.3,
    offset_vel: float = 0.5,
    store_token_obs: bool = False,
    tokens: list[int] | None = None,
) -> Dataset:
    """Recovery episodes for the point-mass apps: start offset from the
    reference and let the expert pull back onto it."""
    _check_expert(expert, refs[0].family)
    obs_dim = 4 if store_token_obs else 8
    kind = "token_generate" if store_token_obs else "track"
    ds = Dataset(obs_dim=obs_dim, act_dim=2, provenance={
        "app": "token_gen" if store_token_obs else "track",
        "strategy": strategy.kind, "noise_level": strategy.noise_level,
        "expert": expert.task_subset_id, "recovery": True,
    })
    n = min(len(r) for r in refs)
    for e in range(count):
        ref = refs[e % len(refs)]
        token = tokens[e % len(refs)] if tokens else -1
        start = int(rng.integers(0, max(1, n - length - 1)))
        pos = ref.positions[start] + (2 * rng.uniform((2,)) - 1) * offset_pos
        vel = ref.velocities[start] + (2 * rng.uniform((2,)) - 1) * offset_vel
        rows_obs, rows_sto, rows_exe = [], [], []
        for k in range(start, min(start + length, n - 1)):
            track_obs = np.concatenate(
                [ref.positions[k] - pos, ref.velocities[k] - vel, ref.positions[k + 1] - pos, ref.velocities[k + 1]]
            )[None, :]
            stored_n, exec_n = _strategy_actions(expert, track_obs, strategy, rng)
            rows_obs.append(np.concatenate([pos, vel]) if store_token_obs else track_obs[0])
            rows_sto.append(expert.env_action(stored_n[0]))
            rows_exe.append(expert.env_action(exec_n[0]))
            u = np.clip(rows_exe[-1], -env_cfg.force_limit, env_cfg.force_limit)
            vel = vel + env_cfg.dt * (u / env_cfg.mass - env_cfg.damping * vel)
            pos = pos + env_cfg.dt * vel
        ds.add_episode(np.asarray(rows_obs), np.asarray(rows_sto), np.asarray(rows_exe), kind, token)
    return ds


def collect(expert: ExpertPolicy, task: TaskSpec, strategy: SamplingStrategy, rng: Rng,
            max_transitions: int, *, env_cfg=None, cell: Perturbation | None = None,
            refs: list[ReferenceMotion] | None = None, tokens: list[int] | None = None) -> Dataset:
    """Strategy-dispatching entry point over the three applications."""
    if task.kind == "perturb_recover":
        if cell is None:
            raise ValueError("perturb_recover collection needs the perturbation cell")
        return collect_perturb(expert, env_cfg or PendulumConfig(), cell, strategy, rng, max_transitions)
    if task.kind == "track":
        use = refs if refs is not None else [task.reference]
        return collect_tracking(expert, env_cfg or PointMassConfig(), use, strategy, rng, max_transitions)
    if task.kind == "token_generate":
        use = refs if refs is not None else [task.reference]
        return collect_tracking(
            expert, env_cfg or PointMassConfig(), use, strategy, rng, max_transitions,
            store_token_obs=True, tokens=tokens if tokens is not None else [task.token] * len(use),
        )
    raise ValueError(f"unknown task kind {task.kind!r}")
