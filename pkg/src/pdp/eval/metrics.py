"""Evaluation metrics: success predicates, tracking errors, placement
correctness, and recovery-mode statistics.

The placement-correctness score is the mean over policy recovery-signature
points of the distance to the nearest ground-truth point. For the pendulum
the signature is (theta, theta_dot) at first re-entry into the upright
band, and the recovery mode is classified from the net winding: no bottom
crossing is "direct", otherwise the winding sign separates ccw from cw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs import PendulumConfig

MODES = ("cw", "ccw", "direct")


@dataclass
class RecoverySignature:
    point: np.ndarray  # (theta, theta_dot) at first upright-band re-entry
    mode: str
    entry_step: int


@dataclass
class EvalReport:
    label: str
    n_episodes: int = 0
    success_rate: float = float("nan")
    success_id: float = float("nan")
    success_ood: float = float("nan")
    e_gmpjpe: float = float("nan")
    e_mpjpe: float = float("nan")
    e_vel: float = float("nan")
    e_acc: float = float("nan")
    fpc: float = float("nan")
    mode_histogram: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {}
        for k in ("label", "n_episodes", "success_rate", "success_id", "success_ood",
                  "e_gmpjpe", "e_mpjpe", "e_vel", "e_acc", "fpc"):
            out[k] = getattr(self, k)
        out["mode_histogram"] = dict(self.mode_histogram)
        out["seeds"] = list(self.seeds)
        out["extra"] = dict(self.extra)
        return out

    CSV_FIELDS = ("label", "n_episodes", "success_rate", "success_id", "success_ood",
                  "e_gmpjpe", "e_mpjpe", "e_vel", "e_acc", "fpc")

    def csv_row(self) -> str:
        vals = []
        for k in self.CSV_FIELDS:
            v = getattr(self, k)
            vals.append(str(v) if not isinstance(v, float) else repr(v))
        return ",".join(vals)


# ---------------------------------------------------------------------------
# success predicates
# ---------------------------------------------------------------------------


def tracking_success(rollout_pos: np.ndarray, reference_pos: np.ndarray, threshold: float = 0.5) -> bool:
    """Success iff the position error never exceeds threshold at any frame."""
    if rollout_pos.shape != reference_pos.shape:
        raise ValueError(f"rollout {rollout_pos.shape} and reference {reference_pos.shape} must align")
    err = np.linalg.norm(rollout_pos - reference_pos, axis=-1)
    return bool(err.max() <= threshold)


def perturbation_success(theta: np.ndarray, unwrapped: np.ndarray, onset_step: int,
                         cfg: PendulumConfig) -> np.ndarray:
    """Per-episode success: no fall arms inside the post-onset window and
    confirms (theta/unwrapped are (T, B)); the rollout should extend
    recovery_timeout beyond the window so late arms can resolve."""
    from ..envs import fallen_mask

    window = int(cfg.post_onset_window / cfg.dt)
    return ~fallen_mask(cfg, theta, start_step=onset_step, unwrapped=unwrapped,
                        arm_window_steps=window + 1)


# ---------------------------------------------------------------------------
# tracking error metrics
# ---------------------------------------------------------------------------


def error_metrics(rollout_pos: np.ndarray, reference_pos: np.ndarray, dt: float) -> tuple[float, float, float, float]:
    """(e_gmpjpe, e_mpjpe, e_vel, e_acc) between aligned (T, 2) trajectories.

    g-mpjpe is the world-frame mean position error; mpjpe translates the
    rollout onto the reference at frame 0 first; velocity/acceleration
    errors come from finite differences of the positions.
    """
    if rollout_pos.shape != reference_pos.shape:
        raise ValueError(f"aligned sequences required, got {rollout_pos.shape} vs {reference_pos.shape}")
    if rollout_pos.shape[0] < 3:
        raise ValueError("need at least 3 frames for acceleration error")
    g = float(np.linalg.norm(rollout_pos - reference_pos, axis=-1).mean())
    aligned_diff = (rollout_pos - rollout_pos[0]) - (reference_pos - reference_pos[0])
    m = float(np.linalg.norm(aligned_diff, axis=-1).mean())
    v_r = np.diff(rollout_pos, axis=0) / dt
    v_g = np.diff(reference_pos, axis=0) / dt
    e_vel = float(np.linalg.norm(v_r - v_g, axis=-1).mean())
    a_r = np.diff(v_r, axis=0) / dt
    a_g = np.diff(v_g, axis=0) / dt
    e_acc = float(np.linalg.norm(a_r - a_g, axis=-1).mean())
    return g, m, e_vel, e_acc


# ---------------------------------------------------------------------------
# placement correctness and recovery modes
# ---------------------------------------------------------------------------


def fpc(policy_points: np.ndarray, ground_truth_points: np.ndarray) -> float:
    """Mean nearest-neighbor distance from policy points to ground truth.

    Empty policy sets score +inf (a policy that never produced a valid
    recovery has no placements to credit); empty ground truth is an error.
    """
    ground_truth_points = np.asarray(ground_truth_points, dtype=np.float64)
    policy_points = np.asarray(policy_points, dtype=np.float64)
    if ground_truth_points.size == 0:
        raise ValueError("fpc: ground-truth point set is empty")
    if policy_points.size == 0:
        return float("inf")
    d = np.sqrt(((policy_points[:, None, :] - ground_truth_points[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean())


def recovery_signature(theta: np.ndarray, omega: np.ndarray, unwrapped: np.ndarray,
                       onset_step: int, cfg: PendulumConfig) -> RecoverySignature | None:
    """Signature of one episode's recovery, or None if it never re-enters the
    upright band after leaving it post-onset."""
    t_len = theta.shape[0]
    band = cfg.upright_band
    left = None
    for t in range(onset_step, t_len):
        if abs(theta[t]) > band:
            left = t
            break
    if left is None:
        # never pushed out of the band: direct trivial recovery at onset
        return RecoverySignature(point=np.array([theta[onset_step], omega[onset_step]]), mode="direct",
                                 entry_step=onset_step)
    for t in range(left, t_len):
        if abs(theta[t]) < band:
            wind = unwrapped[t] - unwrapped[onset_step]
            crossings = _bottom_crossings(unwrapped[onset_step : t + 1])
            if crossings == 0:
                mode = "direct"
            else:
                mode = "ccw" if wind > 0 else "cw"
            return RecoverySignature(point=np.array([theta[t], omega[t]]), mode=mode, entry_step=t)
    return None


def _bottom_crossings(unwrapped: np.ndarray) -> int:
    """Number of passes through the hanging position (odd multiples of pi)."""
    shifted = (unwrapped - np.pi) / (2 * np.pi)
    k = np.floor(shifted)
    return int(np.abs(np.diff(k)).sum())


def mode_histogram(signatures: list[RecoverySignature | None]) -> dict:
    """Counts per recovery mode; unterminated recoveries (None) are excluded
    and reported under 'failed'."""
    counts = {m: 0 for m in MODES}
    failed = 0
    for s in signatures:
        if s is None:
            failed += 1
        else:
            counts[s.mode] += 1
    counts["failed"] = failed
    return counts


def winding_mode_oracle(theta_seq: np.ndarray, onset_step: int, entry_step: int, band: float) -> str:
    """Independent classification via numpy's unwrap, for cross-checking."""
    unwrapped = np.unwrap(theta_seq)
    wind = unwrapped[entry_step] - unwrapped[onset_step]
    crossings = _bottom_crossings(unwrapped[onset_step : entry_step + 1])
    if crossings == 0:
        return "direct"
    return "ccw" if wind > 0 else "cw"
