"""PPO training of per-task-subset expert policies.

One expert per perturbation cell (magnitude x direction) for the pendulum,
one per motion family for point-mass tracking. Each problem is small, so a
few hundred clipped-surrogate iterations with GAE suffice; experts then
serve as the optimal-action oracle for data collection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs import FallTracker, PendulumConfig, Perturbation, PointMassConfig, ReferenceMotion, fallen_mask, wrap_angle
from ..envs.rollout import rollout_pendulum, rollout_tracking
from ..numerics import AdamWState, Rng, Tensor, adamw_step, backward, no_grad, zero_grads
from ..numerics import tensor as F
from .nets import ExpertPolicy


class TrainingFailed(RuntimeError):
    def __init__(self, msg: str, curve: list):
        super().__init__(msg)
        self.curve = curve


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    horizon_length: int = 64
    num_envs: int = 16
    mini_epochs: int = 6
    batch_size: int = 256
    exploration_noise: float = 0.3
    hidden: tuple[int, ...] = (64, 64)
    value_coef: float = 0.5
    iterations: int = 400
    eval_every: int = 25
    eval_episodes: int = 24
    stop_threshold: float = 0.95  # quick-eval success to stop early (pendulum)
    stop_error: float = 0.04  # quick-eval mean error to stop early (tracking)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0 and self.clip > 0.0):
            raise ValueError("PpoConfig requires 0<gamma<=1, 0<=lam<=1, clip>0")


@dataclass(frozen=True)
class RecoveryRewardConfig:
    w_p: float = 0.9
    w_v: float = 0.1
    k_p: float = 1.0
    k_v: float = 0.05


@dataclass(frozen=True)
class TrackingRewardConfig:
    w_p: float = 0.5
    w_v: float = 0.5
    k_p: float = 10.0
    k_v: float = 1.0


def tracking_reward(state, reference: ReferenceMotion, phase: int, cfg: TrackingRewardConfig = TrackingRewardConfig()) -> float:
    """w_p * exp(-k_p ||dx||^2) + w_v * exp(-k_v ||dv||^2) against the phase frame."""
    dx = reference.positions[phase] - state.q
    dv = reference.velocities[phase] - state.v
    return float(cfg.w_p * np.exp(-cfg.k_p * dx @ dx) + cfg.w_v * np.exp(-cfg.k_v * dv @ dv))


def tracking_reward_batch(pos_err: np.ndarray, vel_err: np.ndarray, cfg: TrackingRewardConfig = TrackingRewardConfig()) -> np.ndarray:
    return cfg.w_p * np.exp(-cfg.k_p * (pos_err**2).sum(axis=-1)) + cfg.w_v * np.exp(-cfg.k_v * (vel_err**2).sum(axis=-1))


def recovery_reward_batch(theta: np.ndarray, omega: np.ndarray, cfg: RecoveryRewardConfig = RecoveryRewardConfig()) -> np.ndarray:
    """Upright-posture and velocity terms; posture error is the squared tip chord 2(1-cos theta)."""
    chord_sq = 2.0 * (1.0 - np.cos(theta))
    return cfg.w_p * np.exp(-cfg.k_p * chord_sq) + cfg.w_v * np.exp(-cfg.k_v * omega**2)


def gae(rewards, values, bootstrap_value, gamma: float, lam: float, dones=None):
    """Generalized advantage estimation; arrays are (T,) or (T, B).

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1};  returns = A + V
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"gae: rewards {rewards.shape} and values {values.shape} must match")
    squeeze = rewards.ndim == 1
    r = rewards[:, None] if squeeze else rewards
    v = values[:, None] if squeeze else values
    t_len, b = r.shape
    d = np.zeros_like(r) if dones is None else np.asarray(dones, dtype=np.float64).reshape(t_len, b)
    boot = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), (b,))
    adv = np.zeros_like(r)
    nxt = np.zeros(b)
    v_next = boot
    for t in range(t_len - 1, -1, -1):
        mask = 1.0 - d[t]
        delta = r[t] + gamma * v_next * mask - v[t]
        nxt = delta + gamma * lam * mask * nxt
        adv[t] = nxt
        v_next = v[t]
    ret = adv + v
    if squeeze:
        return adv[:, 0], ret[:, 0]
    return adv, ret


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_update(
    policy: ExpertPolicy,
    batch: dict,
    cfg: PpoConfig,
    opt_actor: AdamWState,
    opt_critic: AdamWState,
    rng: Rng,
) -> dict:
    """Clipped-surrogate + value-MSE update over mini-epochs; returns loss stats."""
    obs, act = batch["obs"], batch["act"]
    logp_old, adv, ret = batch["logp"], batch["adv"], batch["ret"]
    n = obs.shape[0]
    stats = {"actor_loss": 0.0, "value_loss": 0.0, "updates": 0}
    a_params, c_params = policy.actor_params(), policy.critic_params()
    for _ in range(cfg.mini_epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            obs_t = Tensor(obs[idx])
            logp = policy.log_prob_t(obs_t, act[idx])
            ratio = F.exp(F.sub(logp, Tensor(logp_old[idx])))
            adv_t = Tensor(adv[idx])
            surr = F.minimum(F.mul(ratio, adv_t), F.mul(F.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv_t))
            actor_loss = F.mul(F.mean(surr), Tensor(-1.0))
            v = F.reshape(policy.critic(obs_t), (idx.shape[0],))
            value_loss = F.mse(v, Tensor(ret[idx]))
            loss = F.add(actor_loss, F.mul(value_loss, Tensor(cfg.value_coef)))
            if not np.isfinite(loss.item()):
                raise RuntimeError(
                    f"ppo_update: non-finite loss (actor={actor_loss.item()}, value={value_loss.item()}, "
                    f"ratio range [{ratio.data.min()}, {ratio.data.max()}])"
                )
            zero_grads(a_params)
            zero_grads(c_params)
            backward(loss)
            adamw_step(a_params, opt_actor)
            adamw_step(c_params, opt_critic)
            stats["actor_loss"] += actor_loss.item()
            stats["value_loss"] += value_loss.item()
            stats["updates"] += 1
    stats["actor_loss"] /= max(1, stats["updates"])
    stats["value_loss"] /= max(1, stats["updates"])
    return stats


# ---------------------------------------------------------------------------
# rollout runners with per-env episode management
# ---------------------------------------------------------------------------


class _PendulumCellRunner:
    """Continuing vectorized episodes for one perturbation cell.

    A fraction of episodes are recovery-style (random full-circle inits, no
    kick) so the expert learns corrective behavior everywhere, mirroring the
    recovery-episode augmentation used at data-collection time.
    """

    def __init__(self, env_cfg: PendulumConfig, cell: Perturbation, ppo: PpoConfig, policy: ExpertPolicy,
                 rng: Rng, recovery_frac: float = 0.4, reward: RecoveryRewardConfig = RecoveryRewardConfig()):
        self.cfg = env_cfg
        self.cell = cell
        self.ppo = ppo
        self.policy = policy
        self.rng = rng
        self.recovery_frac = recovery_frac
        self.reward = reward
        b = ppo.num_envs
        self.theta = np.zeros(b)
        self.omega = np.zeros(b)
        self.unwrapped = np.zeros(b)
        self.ep_step = np.zeros(b, dtype=np.int64)
        self.onset = np.full(b, -1, dtype=np.int64)
        self.kick = np.zeros(b)
        self.ep_len = np.zeros(b, dtype=np.int64)
        self.tracker = FallTracker(env_cfg, b)
        for i in range(b):
            self._reset_col(i)

    def _reset_col(self, i: int) -> None:
        cfg, r = self.cfg, self.rng
        if r.uniform() < self.recovery_frac:
            self.theta[i] = wrap_angle((2 * r.uniform() - 1) * np.pi)
            self.omega[i] = (2 * r.uniform() - 1) * 2.0
            self.onset[i] = -1
            self.kick[i] = 0.0
            self.ep_len[i] = int(4.0 / cfg.dt)
        else:
            self.theta[i] = (2 * r.uniform() - 1) * cfg.reset_angle_jitter
            self.omega[i] = (2 * r.uniform() - 1) * cfg.reset_vel_jitter
            onset_t = 0.4 + 0.8 * r.uniform()
            self.onset[i] = int(round(onset_t / cfg.dt))
            self.kick[i] = self.cell.magnitude * cfg.kick_scale * self.cell.direction
            self.ep_len[i] = self.onset[i] + int(cfg.post_onset_window / cfg.dt)
        self.unwrapped[i] = self.theta[i]
        self.ep_step[i] = 0

    def _observe(self) -> np.ndarray:
        active = (self.ep_step >= self.onset) & (self.ep_step < self.onset + self.cell.duration) & (self.onset >= 0)
        return np.stack([np.sin(self.theta), np.cos(self.theta), self.omega, active.astype(np.float64)], axis=1)

    def _step_dynamics(self, torque: np.ndarray) -> None:
        cfg = self.cfg
        active = (self.ep_step >= self.onset) & (self.ep_step < self.onset + self.cell.duration) & (self.onset >= 0)
        u = np.clip(torque, -cfg.torque_limit, cfg.torque_limit) + np.where(active, self.kick, 0.0)
        self.omega = self.omega + cfg.dt * (
            (cfg.gravity / cfg.length) * np.sin(self.theta) + u / cfg.inertia - cfg.damping * self.omega
        )
        delta = cfg.dt * self.omega
        self.unwrapped = self.unwrapped + delta
        self.theta = wrap_angle(self.theta + delta)
        self.ep_step += 1

    def collect(self, horizon: int) -> dict:
        b = self.ppo.num_envs
        obs_buf = np.empty((horizon, b, 4))
        act_buf = np.empty((horizon, b, 1))
        logp_buf = np.empty((horizon, b))
        rew_buf = np.empty((horizon, b))
        val_buf = np.empty((horizon, b))
        done_buf = np.zeros((horizon, b))
        for t in range(horizon):
            obs = self._observe()
            act, logp = self.policy.sample(obs, self.rng)
            obs_buf[t], act_buf[t], logp_buf[t] = obs, act, logp
            val_buf[t] = self.policy.value(obs)
            self._step_dynamics(self.policy.env_action(np.clip(act[:, 0], -1.0, 1.0)))
            rew_buf[t] = recovery_reward_batch(self.theta, self.omega, self.reward)
            fell = self.tracker.update(self.theta, self.unwrapped).copy()
            timeout = self.ep_step >= self.ep_len
            done = fell | timeout
            if np.any(done):
                next_obs = self._observe()
                next_val = self.policy.value(next_obs)
                # bootstrap through pure timeouts; falls terminate for real
                rew_buf[t] += self.ppo.gamma * next_val * (timeout & ~fell)
                done_buf[t] = done.astype(np.float64)
                for i in np.nonzero(done)[0]:
                    self._reset_col(i)
                self.tracker.reset_columns(done, self.unwrapped)
        boot = self.policy.value(self._observe())
        return {
            "obs": obs_buf,
            "act": act_buf,
            "logp": logp_buf,
            "rew": rew_buf,
            "val": val_buf,
            "done": done_buf,
            "boot": boot,
        }


class _TrackingFamilyRunner:
    """Continuing vectorized tracking episodes over one family's references."""

    def __init__(self, env_cfg: PointMassConfig, refs: list[ReferenceMotion], ppo: PpoConfig,
                 policy: ExpertPolicy, rng: Rng, reward: TrackingRewardConfig = TrackingRewardConfig()):
        self.cfg = env_cfg
        self.refs = refs
        self.ppo = ppo
        self.policy = policy
        self.rng = rng
        self.reward = reward
        b = ppo.num_envs
        n = min(len(r) for r in refs)
        self.pos_refs = np.stack([r.positions[:n] for r in refs])
        self.vel_refs = np.stack([r.velocities[:n] for r in refs])
        self.n_frames = n
        self.which = np.zeros(b, dtype=np.int64)
        self.pos = np.zeros((b, 2))
        self.vel = np.zeros((b, 2))
        self.phase = np.zeros(b, dtype=np.int64)
        for i in range(b):
            self._reset_col(i)

    def _reset_col(self, i: int) -> None:
        r = self.rng
        self.which[i] = r.integers(0, len(self.refs))
        jitter_p = (2 * r.uniform((2,)) - 1) * 0.05
        jitter_v = (2 * r.uniform((2,)) - 1) * 0.05
        self.pos[i] = self.pos_refs[self.which[i], 0] + jitter_p
        self.vel[i] = self.vel_refs[self.which[i], 0] + jitter_v
        self.phase[i] = 0

    def _observe(self) -> np.ndarray:
        k = self.phase
        w = self.which
        p_now = self.pos_refs[w, k] - self.pos
        v_now = self.vel_refs[w, k] - self.vel
        p_next = self.pos_refs[w, k + 1] - self.pos
        v_next = self.vel_refs[w, k + 1]
        return np.concatenate([p_now, v_now, p_next, v_next], axis=1)

    def collect(self, horizon: int) -> dict:
        b = self.ppo.num_envs
        cfg = self.cfg
        obs_buf = np.empty((horizon, b, 8))
        act_buf = np.empty((horizon, b, 2))
        logp_buf = np.empty((horizon, b))
        rew_buf = np.empty((horizon, b))
        val_buf = np.empty((horizon, b))
        done_buf = np.zeros((horizon, b))
        for t in range(horizon):
            obs = self._observe()
            act, logp = self.policy.sample(obs, self.rng)
            obs_buf[t], act_buf[t], logp_buf[t] = obs, act, logp
            val_buf[t] = self.policy.value(obs)
            u = self.policy.env_action(np.clip(act, -1.0, 1.0))
            self.vel = self.vel + cfg.dt * (np.clip(u, -cfg.force_limit, cfg.force_limit) / cfg.mass - cfg.damping * self.vel)
            self.pos = self.pos + cfg.dt * self.vel
            self.phase += 1
            pos_err = self.pos_refs[self.which, self.phase] - self.pos
            vel_err = self.vel_refs[self.which, self.phase] - self.vel
            rew_buf[t] = tracking_reward_batch(pos_err, vel_err, self.reward)
            failed = np.linalg.norm(pos_err, axis=1) > cfg.fail_threshold
            timeout = self.phase >= self.n_frames - 2
            done = failed | timeout
            if np.any(done):
                next_obs = self._observe()
                next_val = self.policy.value(next_obs)
                rew_buf[t] += self.ppo.gamma * next_val * (timeout & ~failed)
                done_buf[t] = done.astype(np.float64)
                for i in np.nonzero(done)[0]:
                    self._reset_col(i)
        boot = self.policy.value(self._observe())
        return {
            "obs": obs_buf,
            "act": act_buf,
            "logp": logp_buf,
            "rew": rew_buf,
            "val": val_buf,
            "done": done_buf,
            "boot": boot,
        }


# ---------------------------------------------------------------------------
# evaluation and the train_expert entry points
# ---------------------------------------------------------------------------


def evaluate_pendulum_expert(env_cfg: PendulumConfig, policy: ExpertPolicy, cell: Perturbation,
                             n_episodes: int, seed: int) -> float:
    """Deterministic ID success fraction: no fall within the post-onset window."""
    rng = Rng(seed).spawn("expert-eval")
    offsets = np.stack(
        [
            (2 * rng.uniform((n_episodes,)) - 1) * env_cfg.reset_angle_jitter,
            (2 * rng.uniform((n_episodes,)) - 1) * env_cfg.reset_vel_jitter,
        ],
        axis=1,
    )
    onset_step = int(round(cell.onset_time / env_cfg.dt))
    n_steps = onset_step + int((env_cfg.post_onset_window + env_cfg.recovery_timeout) / env_cfg.dt)

    def act_fn(obs, t):
        return policy.env_action(policy.mean(obs))

    out = rollout_pendulum(env_cfg, act_fn, [cell] * n_episodes, offsets, n_steps)
    fell = fallen_mask(env_cfg, out["theta"], start_step=onset_step, unwrapped=out["unwrapped"],
                       arm_window_steps=int(env_cfg.post_onset_window / env_cfg.dt) + 1)
    return float(1.0 - fell.mean())


def evaluate_tracking_expert(env_cfg: PointMassConfig, policy: ExpertPolicy, refs: list[ReferenceMotion],
                             seed: int) -> float:
    """Mean position error of deterministic rollouts over the given references."""
    n = min(len(r) for r in refs)
    positions = np.stack([r.positions[:n] for r in refs])
    velocities = np.stack([r.velocities[:n] for r in refs])
    offsets = np.zeros((len(refs), 4))

    def act_fn(obs, t):
        return policy.env_action(policy.mean(obs))

    out = rollout_tracking(env_cfg, act_fn, positions, velocities, offsets)
    err = np.linalg.norm(out["pos"] - positions.transpose(1, 0, 2)[: out["pos"].shape[0]], axis=2)
    return float(err.mean())


def _train_loop(runner, policy: ExpertPolicy, ppo: PpoConfig, rng: Rng, quick_eval, stop_fn):
    opt_actor = AdamWState(lr=ppo.actor_lr, weight_decay=0.0)
    opt_critic = AdamWState(lr=ppo.critic_lr, weight_decay=0.0)
    curve = []
    for it in range(ppo.iterations):
        seg = runner.collect(ppo.horizon_length)
        adv, ret = gae(seg["rew"], seg["val"], seg["boot"], ppo.gamma, ppo.lam, seg["done"])
        batch = {
            "obs": seg["obs"].reshape(-1, seg["obs"].shape[-1]),
            "act": seg["act"].reshape(-1, seg["act"].shape[-1]),
            "logp": seg["logp"].reshape(-1),
            "adv": normalize_advantages(adv.reshape(-1)),
            "ret": ret.reshape(-1),
        }
        stats = ppo_update(policy, batch, ppo, opt_actor, opt_critic, rng)
        entry = {
            "iteration": it,
            "mean_reward": float(seg["rew"].mean()),
            "actor_loss": stats["actor_loss"],
            "value_loss": stats["value_loss"],
            "eval": float("nan"),
        }
        if (it + 1) % ppo.eval_every == 0 or it + 1 == ppo.iterations:
            score = quick_eval()
            entry["eval"] = score
            curve.append(entry)
            if stop_fn(score):
                break
        else:
            curve.append(entry)
    return curve


def train_pendulum_expert(env_cfg: PendulumConfig, cell: Perturbation, ppo: PpoConfig, seed: int,
                          success_criterion: float = 0.9) -> tuple[ExpertPolicy, list]:
    """Train one perturbation-cell expert; raises TrainingFailed if the final
    100-episode ID success is below `success_criterion`."""
    rng = Rng(seed)
    policy = ExpertPolicy(
        rng.spawn("init"), obs_dim=4, act_dim=1, hidden=ppo.hidden,
        exploration_noise=ppo.exploration_noise, action_scale=env_cfg.torque_limit,
        task_subset_id=f"perturb[m={cell.magnitude},d={cell.direction}]",
    )
    runner = _PendulumCellRunner(env_cfg, cell, ppo, policy, rng.spawn("rollout"))
    quick = lambda: evaluate_pendulum_expert(env_cfg, policy, cell, ppo.eval_episodes, seed=seed + 101)
    curve = _train_loop(runner, policy, ppo, rng.spawn("update"), quick, lambda s: s >= ppo.stop_threshold)
    final = evaluate_pendulum_expert(env_cfg, policy, cell, 100, seed=seed + 404)
    if final < success_criterion:
        raise TrainingFailed(
            f"pendulum expert {policy.task_subset_id} reached {final:.2%} < {success_criterion:.0%}", curve
        )
    return policy, curve


def train_tracking_expert(env_cfg: PointMassConfig, family_refs: list[ReferenceMotion], ppo: PpoConfig,
                          seed: int, eval_refs: list[ReferenceMotion] | None = None,
                          error_criterion: float = 0.05) -> tuple[ExpertPolicy, list]:
    rng = Rng(seed)
    family = family_refs[0].family
    policy = ExpertPolicy(
        rng.spawn("init"), obs_dim=8, act_dim=2, hidden=ppo.hidden,
        exploration_noise=ppo.exploration_noise, action_scale=env_cfg.force_limit,
        task_subset_id=f"track[{family}]",
    )
    runner = _TrackingFamilyRunner(env_cfg, family_refs, ppo, policy, rng.spawn("rollout"))
    eval_set = eval_refs if eval_refs else family_refs
    quick = lambda: evaluate_tracking_expert(env_cfg, policy, eval_set, seed=seed + 101)
    curve = _train_loop(runner, policy, ppo, rng.spawn("update"), quick, lambda s: s <= ppo.stop_error)
    final = evaluate_tracking_expert(env_cfg, policy, eval_set, seed=seed + 404)
    if final > error_criterion:
        raise TrainingFailed(f"tracking expert {policy.task_subset_id} error {final:.4f} > {error_criterion}", curve)
    return policy, curve
