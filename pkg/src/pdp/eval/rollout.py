"""Batched closed-loop evaluation of students and experts.

Policies re-plan every control step (receding horizon: only the first
predicted action row executes unless configured otherwise). Per-episode
noise comes from counter-keyed streams, so results are independent of batch
composition and bit-reproducible for a given evaluation seed.
"""

from __future__ import annotations

import numpy as np

from ..datagen.dataset import NormStats
from ..envs import PendulumConfig, Perturbation, PointMassConfig, ReferenceMotion
from ..envs.rollout import rollout_pendulum, rollout_token, rollout_tracking
from ..expert.nets import ExpertPolicy
from ..kernels import ddpm_sample_batch, pack_denoiser
from ..numerics import Rng, keyed_normal, spawn_keys
from ..policy.training import PolicyBundle, cvae_infer, mlp_infer
from .metrics import RecoverySignature, mode_histogram, recovery_signature


class _HistoryBuffer:
    def __init__(self, n_episodes: int, t_o: int, obs_dim: int):
        self.buf = np.zeros((n_episodes, t_o, obs_dim))
        self.started = False

    def push(self, obs: np.ndarray) -> np.ndarray:
        if not self.started:
            self.buf[:] = obs[:, None, :]
            self.started = True
        else:
            self.buf[:, :-1] = self.buf[:, 1:]
            self.buf[:, -1] = obs
        return self.buf


class StudentActor:
    """Wraps a PolicyBundle as an `act_fn(obs, t)` for the rollout engines."""

    def __init__(self, bundle: PolicyBundle, n_episodes: int, seed: int, exec_steps: int = 1):
        self.bundle = bundle
        self.exec_steps = max(1, min(exec_steps, bundle.denoiser_config.horizon))
        self.history = _HistoryBuffer(n_episodes, bundle.denoiser_config.obs_history, bundle.denoiser_config.obs_dim)
        self.keys = spawn_keys(Rng(seed).spawn("eval-noise"), np.arange(n_episodes, dtype=np.uint64))
        self.tokens = None
        self.queue: list[np.ndarray] = []
        self.step_counter = 0
        d = bundle.denoiser_config
        if bundle.kind == "diffusion":
            self.weights = pack_denoiser(bundle.net)
            n = bundle.schedule.num_steps * d.horizon * d.act_dim
        elif bundle.kind == "cvae":
            n = bundle.config.cvae_latent
        else:
            n = 0
        self.noise_stride = 2 * ((n + 1) // 2) + 2

    def set_tokens(self, tokens: np.ndarray) -> None:
        self.tokens = np.asarray(tokens, dtype=np.int64)

    def _plan(self, obs_window_norm: np.ndarray) -> np.ndarray:
        """One planning query: normalized (B, T_a, act_dim)."""
        b = obs_window_norm.shape[0]
        d = self.bundle.denoiser_config
        offset = self.step_counter * self.noise_stride
        if self.bundle.kind == "diffusion":
            k = self.bundle.schedule.num_steps
            n = k * d.horizon * d.act_dim
            noise = keyed_normal(self.keys, n, offset).reshape(b, k, d.horizon, d.act_dim)
            noise = np.ascontiguousarray(noise.transpose(1, 0, 2, 3))
            return ddpm_sample_batch(
                self.weights, obs_window_norm, self.tokens, self.bundle.schedule, noise,
                unscaled=self.bundle.config.unscaled_forward, clip_x0=self.bundle.config.clip_x0,
            )
        if self.bundle.kind == "mlp":
            return mlp_infer(self.bundle.net, obs_window_norm, self.tokens)
        z = keyed_normal(self.keys, self.bundle.config.cvae_latent, offset)
        return cvae_infer(self.bundle.net, obs_window_norm, z=z)

    def __call__(self, obs: np.ndarray, t: int) -> np.ndarray:
        window = self.history.push(obs)
        if not self.queue:
            plan = self._plan(self.bundle.normalize_obs(window))
            acts = self.bundle.denormalize_act(plan)
            self.queue = [acts[:, i, :] for i in range(self.exec_steps)]
        self.step_counter += 1
        return self.queue.pop(0)


class ExpertActor:
    def __init__(self, expert: ExpertPolicy):
        self.expert = expert

    def __call__(self, obs: np.ndarray, t: int) -> np.ndarray:
        return self.expert.env_action(self.expert.mean(obs))


def make_actor(policy, n_episodes: int, seed: int, exec_steps: int = 1):
    if isinstance(policy, PolicyBundle):
        return StudentActor(policy, n_episodes, seed, exec_steps)
    if isinstance(policy, ExpertPolicy):
        return ExpertActor(policy)
    raise TypeError(f"cannot build an actor from {type(policy).__name__}")


# ---------------------------------------------------------------------------
# application-level evaluation
# ---------------------------------------------------------------------------


def eval_perturbation(policy, env_cfg: PendulumConfig, kicks: list[Perturbation], seed: int,
                      exec_steps: int = 1) -> dict:
    """Closed-loop pendulum evaluation on the given perturbations.

    All kicks must share one onset time (episodes run in lockstep).
    """
    from .metrics import perturbation_success

    n = len(kicks)
    onset_steps = {int(round(k.onset_time / env_cfg.dt)) for k in kicks}
    if len(onset_steps) != 1:
        raise ValueError("eval_perturbation needs a common onset time per batch")
    onset = onset_steps.pop()
    n_steps = onset + int((env_cfg.post_onset_window + env_cfg.recovery_timeout) / env_cfg.dt)
    r = Rng(seed).spawn("eval-init")
    offsets = np.stack(
        [
            (2 * r.uniform((n,)) - 1) * env_cfg.reset_angle_jitter,
            (2 * r.uniform((n,)) - 1) * env_cfg.reset_vel_jitter,
        ],
        axis=1,
    )
    actor = make_actor(policy, n, seed, exec_steps)
    out = rollout_pendulum(env_cfg, actor, kicks, offsets, n_steps)
    success = perturbation_success(out["theta"], out["unwrapped"], onset, env_cfg)
    signatures: list[RecoverySignature | None] = []
    for b in range(n):
        if success[b]:
            signatures.append(
                recovery_signature(out["theta"][:, b], out["omega"][:, b], out["unwrapped"][:, b], onset, env_cfg)
            )
        else:
            signatures.append(None)
    return {
        "success": success,
        "success_rate": float(success.mean()),
        "signatures": signatures,
        "histogram": mode_histogram(signatures),
        "rollout": out,
        "onset_step": onset,
    }


def id_kick_batch(env_cfg: PendulumConfig, n_episodes: int, seed: int) -> list[Perturbation]:
    """n episodes cycling deterministically over the 4-cell ID grid."""
    from ..envs import id_cells

    cells = id_cells(env_cfg)
    return [cells[i % len(cells)] for i in range(n_episodes)]


def ood_kick_batch(env_cfg: PendulumConfig, n_episodes: int, seed: int, onset_time: float | None = None) -> list[Perturbation]:
    """OOD kicks; onset is drawn per episode unless pinned for lockstep rollout."""
    from ..envs import sample_perturbation

    rng = Rng(seed).spawn("ood-kicks")
    kicks = [sample_perturbation("OOD", rng, env_cfg) for _ in range(n_episodes)]
    if onset_time is not None:
        kicks = [Perturbation(onset_time, k.magnitude, k.direction, k.duration) for k in kicks]
    return kicks


def eval_perturbation_ood(policy, env_cfg: PendulumConfig, n_episodes: int, seed: int,
                          exec_steps: int = 1, onset_bins: int = 5) -> dict:
    """OOD protocol: continuous magnitude/direction; onset times quantized to
    a few lockstep batches so episodes can still run vectorized."""
    rng = Rng(seed).spawn("ood")
    o0, o1 = env_cfg.ood_onset_range
    lo, hi = env_cfg.ood_magnitude_range
    per_bin = n_episodes // onset_bins
    successes = []
    for b in range(onset_bins):
        onset = o0 + (o1 - o0) * (b + 0.5) / onset_bins
        kicks = []
        for _ in range(per_bin):
            mag = lo + (hi - lo) * rng.uniform()
            direction = 1 if rng.uniform() < 0.5 else -1
            kicks.append(Perturbation(onset, mag, direction, env_cfg.kick_steps))
        res = eval_perturbation(policy, env_cfg, kicks, seed + 1000 + b, exec_steps)
        successes.append(res["success"])
    all_s = np.concatenate(successes)
    return {"success_rate": float(all_s.mean()), "success": all_s, "n_episodes": int(all_s.size)}


def eval_tracking(policy, env_cfg: PointMassConfig, refs: list[ReferenceMotion], seed: int,
                  exec_steps: int = 1, threshold: float | None = None) -> dict:
    from .metrics import error_metrics

    thr = env_cfg.fail_threshold if threshold is None else threshold
    n_frames = min(len(r) for r in refs)
    positions = np.stack([r.positions[:n_frames] for r in refs])
    velocities = np.stack([r.velocities[:n_frames] for r in refs])
    offsets = np.zeros((len(refs), 4))
    actor = make_actor(policy, len(refs), seed, exec_steps)
    out = rollout_tracking(env_cfg, actor, positions, velocities, offsets)
    t_len = out["pos"].shape[0]
    ref_t = positions.transpose(1, 0, 2)[:t_len]
    err = np.linalg.norm(out["pos"] - ref_t, axis=2)
    success = err.max(axis=0) <= thr
    per_ep = [error_metrics(out["pos"][:, b], ref_t[:, b], env_cfg.dt) for b in range(len(refs))]
    g, m, ev, ea = (float(np.mean([p[i] for p in per_ep])) for i in range(4))
    return {
        "success_rate": float(success.mean()),
        "success": success,
        "mean_err": float(err.mean()),
        "e_gmpjpe": g,
        "e_mpjpe": m,
        "e_vel": ev,
        "e_acc": ea,
        "rollout": out,
    }


def eval_token_generation(bundle: PolicyBundle, env_cfg: PointMassConfig, refs: list[ReferenceMotion],
                          tokens: list[int], seed: int, exec_steps: int = 1,
                          threshold: float = 0.5) -> dict:
    """Generate from (state, token) alone and compare to each token's
    canonical reference."""
    n_frames = min(len(r) for r in refs)
    n_steps = n_frames - 2
    r = Rng(seed).spawn("token-init")
    offsets = np.stack([np.concatenate([ref.positions[0], ref.velocities[0]]) for ref in refs])
    offsets[:, :2] += (2 * r.uniform((len(refs), 2)) - 1) * 0.02
    actor = make_actor(bundle, len(refs), seed, exec_steps)
    actor.set_tokens(np.asarray(tokens))
    out = rollout_token(env_cfg, actor, offsets, n_steps)
    ref_t = np.stack([ref.positions[:n_steps + 1] for ref in refs]).transpose(1, 0, 2)
    err = np.linalg.norm(out["pos"] - ref_t, axis=2)
    success = err.max(axis=0) <= threshold
    return {
        "success_rate": float(success.mean()),
        "mean_err": float(err.mean()),
        "per_token_err": {int(t): float(err[:, i].mean()) for i, t in enumerate(tokens)},
        "rollout": out,
    }
