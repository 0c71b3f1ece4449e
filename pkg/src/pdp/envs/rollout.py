"""Fixed-length batched rollouts driven by an arbitrary policy callable.

`act_fn(obs, t)` receives the (B, obs_dim) observation batch and the step
index and returns env-unit actions (B, act_dim); stateful policies (obs
histories, receding horizons) close over their own buffers.
"""

from __future__ import annotations

import numpy as np

from .base import Perturbation
from .pendulum import PendulumConfig, make_batch
from .pointmass import PointMassBatch, PointMassConfig, token_obs_batch, track_obs_batch


def rollout_pendulum(
    cfg: PendulumConfig,
    act_fn,
    perturbations: list[Perturbation | None],
    init_offsets: np.ndarray,
    n_steps: int,
) -> dict:
    batch = make_batch(cfg, perturbations, init_offsets)
    b = batch.size
    theta = np.empty((n_steps + 1, b))
    omega = np.empty((n_steps + 1, b))
    unwrapped = np.empty((n_steps + 1, b))
    obs_seq = np.empty((n_steps, b, 4))
    act_seq = np.empty((n_steps, b, 1))
    theta[0], omega[0], unwrapped[0] = batch.theta, batch.omega, batch.unwrapped
    for t in range(n_steps):
        obs = batch.observe()
        act = np.asarray(act_fn(obs, t), dtype=np.float64).reshape(b, 1)
        obs_seq[t] = obs
        act_seq[t] = act
        batch.step(act[:, 0])
        theta[t + 1], omega[t + 1], unwrapped[t + 1] = batch.theta, batch.omega, batch.unwrapped
    return {
        "theta": theta,
        "omega": omega,
        "unwrapped": unwrapped,
        "obs": obs_seq,
        "actions": act_seq,
    }


def rollout_tracking(
    cfg: PointMassConfig,
    act_fn,
    positions: np.ndarray,  # (B, N, 2) per-episode reference positions
    velocities: np.ndarray,
    init_offsets: np.ndarray,  # (B, 4)
    n_steps: int | None = None,
) -> dict:
    b, n_frames, _ = positions.shape
    if n_steps is None:
        n_steps = n_frames - 2
    if n_steps > n_frames - 2:
        raise ValueError(f"rollout of {n_steps} steps needs {n_steps + 2} reference frames, have {n_frames}")
    batch = PointMassBatch(cfg, positions[:, 0] + init_offsets[:, :2], velocities[:, 0] + init_offsets[:, 2:])
    pos = np.empty((n_steps + 1, b, 2))
    vel = np.empty((n_steps + 1, b, 2))
    obs_seq = np.empty((n_steps, b, 8))
    act_seq = np.empty((n_steps, b, 2))
    pos[0], vel[0] = batch.pos, batch.vel
    for t in range(n_steps):
        obs = track_obs_batch(batch, positions, velocities, t)
        act = np.asarray(act_fn(obs, t), dtype=np.float64).reshape(b, 2)
        obs_seq[t] = obs
        act_seq[t] = act
        batch.step(act)
        pos[t + 1], vel[t + 1] = batch.pos, batch.vel
    return {"pos": pos, "vel": vel, "obs": obs_seq, "actions": act_seq}


def rollout_token(
    cfg: PointMassConfig,
    act_fn,
    init_offsets: np.ndarray,  # (B, 4)
    n_steps: int,
) -> dict:
    b = init_offsets.shape[0]
    batch = PointMassBatch(cfg, init_offsets[:, :2].copy(), init_offsets[:, 2:].copy())
    pos = np.empty((n_steps + 1, b, 2))
    vel = np.empty((n_steps + 1, b, 2))
    obs_seq = np.empty((n_steps, b, 4))
    act_seq = np.empty((n_steps, b, 2))
    pos[0], vel[0] = batch.pos, batch.vel
    for t in range(n_steps):
        obs = token_obs_batch(batch)
        act = np.asarray(act_fn(obs, t), dtype=np.float64).reshape(b, 2)
        obs_seq[t] = obs
        act_seq[t] = act
        batch.step(act)
        pos[t + 1], vel[t + 1] = batch.pos, batch.vel
    return {"pos": pos, "vel": vel, "obs": obs_seq, "actions": act_seq}
