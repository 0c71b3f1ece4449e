"""Planar point-mass environments: reference tracking and token-conditioned generation.

Dynamics: x_dd = u/m - c*x_d per axis, force clipped per component,
semi-implicit Euler at dt = 0.02 s. The tracking observation is expressed
relative to the agent position (reference targets as offsets); the
token-generation observation is just (position, velocity) with the task
conveyed by a discrete token on the side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Rng
from .base import EnvState, NonFiniteActionError, OffsetBoundsError, TaskSpec
from .motions import ReferenceMotion


@dataclass(frozen=True)
class PointMassConfig:
    dt: float = 0.02
    mass: float = 1.0
    damping: float = 0.5
    force_limit: float = 5.0
    reset_pos_jitter: float = 0.02
    reset_vel_jitter: float = 0.02
    max_offset_pos: float = 1.0
    max_offset_vel: float = 2.0
    fail_threshold: float = 0.5  # tracking failure distance, length units

    @property
    def act_dim(self) -> int:
        return 2


TRACK_OBS_DIM = 8  # (ref - x, ref_vel - v, next ref - x, next ref_vel)
TOKEN_OBS_DIM = 4  # (x, v)


class PointMassEnv:
    def __init__(self, config: PointMassConfig = PointMassConfig()):
        self.cfg = config

    def reset(
        self,
        seed: int = 0,
        init_offset: np.ndarray | None = None,
        reference: ReferenceMotion | None = None,
    ) -> EnvState:
        cfg = self.cfg
        if init_offset is None:
            r = Rng(seed).spawn("pointmass-reset")
            init_offset = np.concatenate(
                [
                    (2 * r.uniform((2,)) - 1) * cfg.reset_pos_jitter,
                    (2 * r.uniform((2,)) - 1) * cfg.reset_vel_jitter,
                ]
            )
        init_offset = np.asarray(init_offset, dtype=np.float64)
        if np.any(np.abs(init_offset[:2]) > cfg.max_offset_pos) or np.any(np.abs(init_offset[2:]) > cfg.max_offset_vel):
            raise OffsetBoundsError(f"point-mass init offset {init_offset.tolist()} outside bounds")
        if reference is not None:
            q = reference.positions[0] + init_offset[:2]
            v = reference.velocities[0] + init_offset[2:]
        else:
            q = init_offset[:2].copy()
            v = init_offset[2:].copy()
        return EnvState(q=q.astype(np.float64), v=v.astype(np.float64), dt=cfg.dt, phase_index=0)

    def step(self, state: EnvState, action: np.ndarray) -> EnvState:
        cfg = self.cfg
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(action)):
            raise NonFiniteActionError(f"point-mass action not finite: {action}")
        u = np.clip(action, -cfg.force_limit, cfg.force_limit)
        v_new = state.v + cfg.dt * (u / cfg.mass - cfg.damping * state.v)
        q_new = state.q + cfg.dt * v_new
        return EnvState(
            q=q_new,
            v=v_new,
            dt=cfg.dt,
            step_count=state.step_count + 1,
            phase_index=state.phase_index + 1,
        )

    def observe(self, state: EnvState, task: TaskSpec) -> np.ndarray:
        if task.kind == "token_generate":
            return np.concatenate([state.q, state.v])
        if task.kind != "track":
            raise ValueError(f"point-mass cannot serve task kind {task.kind!r}")
        ref = task.reference
        k = state.phase_index
        if k + 1 >= len(ref):
            raise IndexError(f"phase_index {k} beyond reference end ({len(ref)} frames, need k+1 lookahead)")
        return np.concatenate(
            [
                ref.positions[k] - state.q,
                ref.velocities[k] - state.v,
                ref.positions[k + 1] - state.q,
                ref.velocities[k + 1],
            ]
        )


class PointMassBatch:
    """B independent point masses stepped in lockstep."""

    def __init__(self, cfg: PointMassConfig, pos: np.ndarray, vel: np.ndarray):
        self.cfg = cfg
        self.pos = pos.astype(np.float64).copy()  # (B, 2)
        self.vel = vel.astype(np.float64).copy()
        self.step_count = 0

    @property
    def size(self) -> int:
        return self.pos.shape[0]

    def step(self, actions: np.ndarray) -> None:
        cfg = self.cfg
        if not np.all(np.isfinite(actions)):
            raise NonFiniteActionError("point-mass batch action not finite")
        u = np.clip(actions.reshape(self.size, 2), -cfg.force_limit, cfg.force_limit)
        self.vel = self.vel + cfg.dt * (u / cfg.mass - cfg.damping * self.vel)
        self.pos = self.pos + cfg.dt * self.vel
        self.step_count += 1


def track_obs_batch(batch: PointMassBatch, positions: np.ndarray, velocities: np.ndarray, phase: int) -> np.ndarray:
    """Vectorized tracking observation against per-episode references.

    positions/velocities: (B, N, 2) stacked reference arrays.
    """
    p_now = positions[:, phase] - batch.pos
    v_now = velocities[:, phase] - batch.vel
    p_next = positions[:, phase + 1] - batch.pos
    v_next = velocities[:, phase + 1]
    return np.concatenate([p_now, v_now, p_next, v_next], axis=1)


def token_obs_batch(batch: PointMassBatch) -> np.ndarray:
    return np.concatenate([batch.pos, batch.vel], axis=1)
