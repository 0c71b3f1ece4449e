"""Torque-limited inverted pendulum with impulse perturbations.

theta = 0 is upright (the unstable equilibrium), wrapped to (-pi, pi].
Dynamics: theta_dd = (g/l) sin(theta) + u/(m l^2) - c * theta_d, integrated
with semi-implicit Euler at dt = 0.02 s. The torque limit is sized so the
cone of direct recovery is ~±0.8 rad; larger knocks force a swing-through,
and the swing-up direction from near-bottom states is the multimodal choice
this environment exists to manufacture.

Perturbations are additive torque over a short window, with a binary flag
exposed in the observation while the window is active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Rng
from .base import EnvState, NonFiniteActionError, OffsetBoundsError, Perturbation

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    w = np.mod(theta + np.pi, TWO_PI) - np.pi
    return np.where(w <= -np.pi, w + TWO_PI, w) if isinstance(w, np.ndarray) else (w + TWO_PI if w <= -np.pi else w)


@dataclass(frozen=True)
class PendulumConfig:
    dt: float = 0.02
    gravity: float = 9.81
    length: float = 1.0
    mass: float = 1.0
    damping: float = 0.1
    torque_limit: float = 7.0
    # perturbation kick: torque = magnitude * kick_scale * direction over kick_steps
    kick_scale: float = 280.0
    kick_steps: int = 5
    id_magnitudes: tuple[float, float] = (0.075, 0.15)
    id_onset_time: float = 1.0
    ood_onset_range: tuple[float, float] = (0.0, 2.0)
    ood_magnitude_range: tuple[float, float] = (0.075, 0.15)
    # init offsets for plain resets
    reset_angle_jitter: float = 0.05
    reset_vel_jitter: float = 0.05
    # recovery-episode offsets may cover the full circle
    max_offset_angle: float = np.pi
    max_offset_vel: float = 2.5
    # evaluation: a fall arms when |theta| > fall_angle holds for fall_hold
    # seconds and confirms unless the upright band is re-entered within
    # recovery_timeout; sustained net winding is a fall regardless
    post_onset_window: float = 6.0
    fall_angle: float = np.pi / 2
    fall_hold: float = 0.5
    recovery_timeout: float = 3.0
    fall_spin_windings: float = 1.5  # net revolutions since onset that count as fallen
    upright_band: float = 0.2

    @property
    def obs_dim(self) -> int:
        return 4

    @property
    def act_dim(self) -> int:
        return 1

    @property
    def inertia(self) -> float:
        return self.mass * self.length**2


class PendulumEnv:
    """Single-instance, value-like; perturbation fixed per episode at reset."""

    def __init__(self, config: PendulumConfig = PendulumConfig()):
        self.cfg = config
        self.perturbation: Perturbation | None = None

    def reset(self, seed: int = 0, init_offset: np.ndarray | None = None, perturbation: Perturbation | None = None) -> EnvState:
        cfg = self.cfg
        if init_offset is None:
            r = Rng(seed).spawn("pendulum-reset")
            init_offset = np.array(
                [
                    (2 * r.uniform() - 1) * cfg.reset_angle_jitter,
                    (2 * r.uniform() - 1) * cfg.reset_vel_jitter,
                ]
            )
        init_offset = np.asarray(init_offset, dtype=np.float64)
        if abs(init_offset[0]) > cfg.max_offset_angle or abs(init_offset[1]) > cfg.max_offset_vel:
            raise OffsetBoundsError(
                f"pendulum init offset {init_offset.tolist()} outside bounds "
                f"(|theta|<={cfg.max_offset_angle}, |vel|<={cfg.max_offset_vel})"
            )
        self.perturbation = perturbation
        return EnvState(q=np.array([wrap_angle(init_offset[0])]), v=np.array([init_offset[1]]), dt=cfg.dt)

    def kick_torque_at(self, step_count: int) -> float:
        p = self.perturbation
        if p is None:
            return 0.0
        onset_step = int(round(p.onset_time / self.cfg.dt))
        if onset_step <= step_count < onset_step + p.duration:
            return p.magnitude * self.cfg.kick_scale * p.direction
        return 0.0

    def step(self, state: EnvState, action: np.ndarray) -> EnvState:
        cfg = self.cfg
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(action)):
            raise NonFiniteActionError(f"pendulum action not finite: {action}")
        u = float(np.clip(action[0], -cfg.torque_limit, cfg.torque_limit))
        kick = self.kick_torque_at(state.step_count)
        theta, omega = float(state.q[0]), float(state.v[0])
        omega_new = omega + cfg.dt * (
            (cfg.gravity / cfg.length) * np.sin(theta) + (u + kick) / cfg.inertia - cfg.damping * omega
        )
        theta_new = wrap_angle(theta + cfg.dt * omega_new)
        nxt = EnvState(
            q=np.array([theta_new]),
            v=np.array([omega_new]),
            dt=cfg.dt,
            step_count=state.step_count + 1,
        )
        next_kick = self.kick_torque_at(nxt.step_count)
        nxt.perturb_active = next_kick != 0.0
        if self.perturbation is not None:
            onset_step = int(round(self.perturbation.onset_time / cfg.dt))
            nxt.perturb_remaining = max(0, onset_step + self.perturbation.duration - nxt.step_count)
        return nxt

    def observe(self, state: EnvState) -> np.ndarray:
        flag = 1.0 if self.kick_torque_at(state.step_count) != 0.0 else 0.0
        theta, omega = float(state.q[0]), float(state.v[0])
        return np.array([np.sin(theta), np.cos(theta), omega, flag])


def sample_perturbation(mode: str, rng: Rng, cfg: PendulumConfig = PendulumConfig()) -> Perturbation:
    """ID: canonical onset, grid magnitudes, either direction. OOD: continuous."""
    if mode == "ID":
        magnitude = float(rng.choice(np.asarray(cfg.id_magnitudes)))
        onset = cfg.id_onset_time
    elif mode == "OOD":
        lo, hi = cfg.ood_magnitude_range
        magnitude = lo + (hi - lo) * rng.uniform()
        o0, o1 = cfg.ood_onset_range
        onset = o0 + (o1 - o0) * rng.uniform()
    else:
        raise ValueError(f"perturbation mode must be 'ID' or 'OOD', got {mode!r}")
    direction = 1 if rng.uniform() < 0.5 else -1
    return Perturbation(onset_time=onset, magnitude=magnitude, direction=direction, duration=cfg.kick_steps)


def id_cells(cfg: PendulumConfig = PendulumConfig()) -> list[Perturbation]:
    """The finite ID training grid: magnitudes x directions at the canonical onset."""
    return [
        Perturbation(onset_time=cfg.id_onset_time, magnitude=m, direction=d, duration=cfg.kick_steps)
        for m in cfg.id_magnitudes
        for d in (-1, 1)
    ]


# ---------------------------------------------------------------------------
# batched simulation (same math, vectorized over episodes)
# ---------------------------------------------------------------------------


class PendulumBatch:
    """B independent pendulums stepped in lockstep."""

    def __init__(self, cfg: PendulumConfig, theta: np.ndarray, omega: np.ndarray,
                 kick_onset_step: np.ndarray, kick_torque: np.ndarray, kick_steps: int):
        self.cfg = cfg
        self.theta = theta.astype(np.float64).copy()
        self.omega = omega.astype(np.float64).copy()
        self.unwrapped = self.theta.copy()
        self.kick_onset_step = kick_onset_step.astype(np.int64)
        self.kick_torque = kick_torque.astype(np.float64)
        self.kick_steps = int(kick_steps)
        self.step_count = 0

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    def kick_now(self) -> np.ndarray:
        active = (self.step_count >= self.kick_onset_step) & (self.step_count < self.kick_onset_step + self.kick_steps)
        return np.where(active, self.kick_torque, 0.0)

    def observe(self) -> np.ndarray:
        flag = (self.kick_now() != 0.0).astype(np.float64)
        return np.stack([np.sin(self.theta), np.cos(self.theta), self.omega, flag], axis=1)

    def step(self, actions: np.ndarray) -> None:
        cfg = self.cfg
        if not np.all(np.isfinite(actions)):
            raise NonFiniteActionError("pendulum batch action not finite")
        u = np.clip(actions.reshape(self.size), -cfg.torque_limit, cfg.torque_limit)
        kick = self.kick_now()
        self.omega = self.omega + cfg.dt * (
            (cfg.gravity / cfg.length) * np.sin(self.theta) + (u + kick) / cfg.inertia - cfg.damping * self.omega
        )
        delta = cfg.dt * self.omega
        self.unwrapped = self.unwrapped + delta
        self.theta = wrap_angle(self.theta + delta)
        self.step_count += 1


def make_batch(cfg: PendulumConfig, perturbations: list[Perturbation | None], init_offsets: np.ndarray) -> PendulumBatch:
    """Assemble a batch from per-episode perturbations (None = no kick) and init offsets."""
    n = len(perturbations)
    onset = np.full(n, -10_000, dtype=np.int64)
    torque = np.zeros(n)
    steps = cfg.kick_steps
    for i, p in enumerate(perturbations):
        if p is None:
            continue
        onset[i] = int(round(p.onset_time / cfg.dt))
        torque[i] = p.magnitude * cfg.kick_scale * p.direction
        steps = p.duration
    offs = np.asarray(init_offsets, dtype=np.float64).reshape(n, 2)
    if np.any(np.abs(offs[:, 0]) > cfg.max_offset_angle) or np.any(np.abs(offs[:, 1]) > cfg.max_offset_vel):
        raise OffsetBoundsError("batch init offsets outside configured bounds")
    return PendulumBatch(cfg, wrap_angle(offs[:, 0]), offs[:, 1], onset, torque, steps)


# ---------------------------------------------------------------------------
# mechanical energy, fall predicate, scripted controllers
# ---------------------------------------------------------------------------


def mechanical_energy(cfg: PendulumConfig, theta, omega):
    """Kinetic plus potential, PE = m g l cos(theta): +mgl upright, -mgl at the bottom."""
    return 0.5 * cfg.inertia * np.square(omega) + cfg.mass * cfg.gravity * cfg.length * np.cos(theta)


class FallTracker:
    """Streaming fall detection for B episodes.

    Arms when |theta| > fall_angle holds for fall_hold seconds; confirms a
    fall when the upright band is not re-entered within recovery_timeout of
    arming. Net winding beyond fall_spin_windings revolutions confirms
    immediately (spinning passes the top too briefly for the dwell test).
    """

    def __init__(self, cfg: PendulumConfig, n: int, arm_window_steps: int | None = None):
        self.cfg = cfg
        self.hold = max(1, int(round(cfg.fall_hold / cfg.dt)))
        self.timeout = max(1, int(round(cfg.recovery_timeout / cfg.dt)))
        self.spin_limit = cfg.fall_spin_windings * TWO_PI
        self.arm_window = arm_window_steps  # arms later than this step index are ignored
        self.run = np.zeros(n, dtype=np.int64)
        self.armed_at = np.full(n, -1, dtype=np.int64)
        self.fallen = np.zeros(n, dtype=bool)
        self.step_idx = 0
        self.wind0: np.ndarray | None = None

    def update(self, theta: np.ndarray, unwrapped: np.ndarray | None = None) -> np.ndarray:
        t = self.step_idx
        if unwrapped is not None:
            if self.wind0 is None:
                self.wind0 = unwrapped.copy()
            self.fallen |= np.abs(unwrapped - self.wind0) >= self.spin_limit
        beyond = np.abs(theta) > self.cfg.fall_angle
        self.run = np.where(beyond, self.run + 1, 0)
        arm_ok = True if self.arm_window is None else t < self.arm_window
        newly = (self.run == self.hold) & (self.armed_at < 0) & arm_ok
        self.armed_at = np.where(newly, t, self.armed_at)
        reentered = np.abs(theta) < self.cfg.upright_band
        self.armed_at = np.where(reentered, -1, self.armed_at)
        self.fallen |= (self.armed_at >= 0) & (t - self.armed_at >= self.timeout)
        self.step_idx += 1
        return self.fallen

    def reset_columns(self, mask: np.ndarray, unwrapped: np.ndarray | None = None) -> None:
        self.run[mask] = 0
        self.armed_at[mask] = -1
        self.fallen[mask] = False
        if self.wind0 is not None and unwrapped is not None:
            self.wind0[mask] = unwrapped[mask]


def fallen_mask(cfg: PendulumConfig, thetas: np.ndarray, start_step: int = 0,
                unwrapped: np.ndarray | None = None, arm_window_steps: int | None = None) -> np.ndarray:
    """Per-episode fall flags over (T, B) wrapped angles from start_step on.

    `arm_window_steps` limits which steps (relative to start_step) may arm
    the dwell clause; confirmation may use the remainder of the rollout.
    """
    sub = thetas[start_step:]
    tracker = FallTracker(cfg, thetas.shape[1], arm_window_steps)
    wind = None if unwrapped is None else unwrapped[start_step:]
    for t in range(sub.shape[0]):
        tracker.update(sub[t], None if wind is None else wind[t])
    return tracker.fallen.copy()


def scripted_recovery_torque(cfg: PendulumConfig, theta: float, omega: float, direction: int) -> float:
    """Bang-bang energy controller that crests the upright moving in `direction`.

    direction=+1 approaches the top counter-clockwise (from theta<0 moving up),
    direction=-1 the mirror. Used to verify both recovery modes are feasible
    and to generate reference multimodal rollouts.
    """
    u_max = cfg.torque_limit
    e_top = cfg.mass * cfg.gravity * cfg.length
    e = mechanical_energy(cfg, theta, omega)
    # capture basin: PD stabilize
    if abs(theta) < 0.45 and abs(omega) < 2.5:
        return float(np.clip(-35.0 * theta - 9.0 * omega, -u_max, u_max))
    if abs(omega) < 0.25:
        # stalled: kick only out of the bottom equilibrium, otherwise coast so
        # gravity reverses the swing (constant torque would park against gravity)
        return float(u_max * direction) if abs(theta) > 3.0 else 0.0
    if omega * direction > 0:
        # moving the preferred way: resonant pump, tapering toward E ~ E_top
        return float(np.clip(2.0 * (e_top + 0.5 - e), -1.0, 1.0) * u_max * np.sign(omega))
    # moving against the preferred way: pump while energy is low (resonance is
    # direction-agnostic), brake before a wrong-way crest becomes possible
    if e > e_top - 2.0:
        return float(-u_max * np.sign(omega))
    return float(u_max * np.sign(omega))
