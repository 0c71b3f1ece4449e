"""Metric tests: success predicates, error metrics, FPC, mode classification."""

import numpy as np
import pytest

from pdp.envs import PendulumConfig, wrap_angle
from pdp.envs.rollout import rollout_pendulum
from pdp.eval import (
    error_metrics,
    fpc,
    mode_histogram,
    perturbation_success,
    recovery_signature,
    tracking_success,
    winding_mode_oracle,
)
from pdp.numerics import Rng

CFG = PendulumConfig()


# ---------------------------------------------------------------------------
# FPC
# ---------------------------------------------------------------------------


def test_fpc_subset_is_zero():
    gt = Rng(1).normal((6, 2))
    assert fpc(gt[:3], gt) == 0.0


def test_fpc_unit_distances():
    assert fpc(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[0.0, 0.0]])) == pytest.approx(1.0)


def test_fpc_enumerated_pairs():
    policy = np.array([[0.3, 0.4], [1.0, 1.0]])
    gt = np.array([[0.0, 0.0], [1.0, 1.0]])
    # min dists: 0.5 (3-4-5 triangle) and 0 -> mean 0.25
    assert fpc(policy, gt) == pytest.approx(0.25)


def test_fpc_permutation_invariant_and_zero_iff_coincident():
    rng = Rng(3)
    policy = rng.normal((7, 2))
    gt = rng.normal((9, 2))
    base = fpc(policy, gt)
    perm_p = policy[Rng(4).permutation(7)]
    perm_g = gt[Rng(5).permutation(9)]
    assert fpc(perm_p, perm_g) == pytest.approx(base, abs=1e-15)
    assert base > 0.0
    assert fpc(gt[2:5], gt) == 0.0


def test_fpc_empty_sets():
    with pytest.raises(ValueError):
        fpc(np.zeros((2, 2)), np.zeros((0, 2)))
    assert fpc(np.zeros((0, 2)), np.zeros((3, 2))) == float("inf")


def test_fpc_matches_bruteforce_on_random_instances():
    for seed in range(100):
        rng = Rng(seed)
        p = rng.normal((5, 2))
        g = rng.normal((4, 2))
        brute = np.mean([min(np.sqrt(((pi - gj) ** 2).sum()) for gj in g) for pi in p])
        assert abs(fpc(p, g) - brute) <= 1e-12


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------


def test_error_metrics_identical_is_zero():
    traj = Rng(2).normal((20, 2))
    assert error_metrics(traj, traj, 0.02) == (0.0, 0.0, 0.0, 0.0)


def test_error_metrics_constant_offset():
    ref = Rng(2).normal((20, 2))
    d = np.array([0.3, -0.4])
    g, m, ev, ea = error_metrics(ref + d, ref, 0.02)
    assert g == pytest.approx(0.5, rel=1e-12)
    assert m == pytest.approx(0.0, abs=1e-12)
    assert ev == pytest.approx(0.0, abs=1e-9)
    assert ea == pytest.approx(0.0, abs=1e-7)


def test_error_metrics_bruteforce_equality():
    for seed in range(20):
        rng = Rng(seed)
        a = rng.normal((12, 2))
        b = rng.normal((12, 2))
        dt = 0.02
        g, m, ev, ea = error_metrics(a, b, dt)
        g2 = np.mean([np.linalg.norm(a[t] - b[t]) for t in range(12)])
        al = a - a[0] + b[0]
        m2 = np.mean([np.linalg.norm(al[t] - b[t]) for t in range(12)])
        va = [(a[t + 1] - a[t]) / dt for t in range(11)]
        vb = [(b[t + 1] - b[t]) / dt for t in range(11)]
        ev2 = np.mean([np.linalg.norm(va[t] - vb[t]) for t in range(11)])
        aa = [(va[t + 1] - va[t]) / dt for t in range(10)]
        ab = [(vb[t + 1] - vb[t]) / dt for t in range(10)]
        ea2 = np.mean([np.linalg.norm(aa[t] - ab[t]) for t in range(10)])
        for got, want in [(g, g2), (m, m2), (ev, ev2), (ea, ea2)]:
            assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_error_metrics_mpjpe_translation_invariance():
    rng = Rng(7)
    a = rng.normal((15, 2))
    b = rng.normal((15, 2))
    g0, m0, *_ = error_metrics(a, b, 0.02)
    shift = np.array([5.0, -3.0])
    g1, m1, *_ = error_metrics(a + shift, b, 0.02)
    assert m1 == pytest.approx(m0, abs=1e-12)
    assert g1 != pytest.approx(g0, abs=1e-6)


def test_error_metrics_short_sequence_rejected():
    with pytest.raises(ValueError):
        error_metrics(np.zeros((2, 2)), np.zeros((2, 2)), 0.02)


def test_constant_velocity_acceleration_error_zero():
    t = np.arange(30)[:, None] * 0.02
    traj = t * np.array([1.0, 0.5])
    _, _, _, ea = error_metrics(traj, traj.copy(), 0.02)
    assert ea == 0.0


# ---------------------------------------------------------------------------
# success predicates
# ---------------------------------------------------------------------------


def test_tracking_success_cases():
    ref = Rng(1).normal((30, 2))
    assert tracking_success(ref, ref, 0.5)
    bad = ref.copy()
    bad[17] += [0.51, 0.0]
    assert not tracking_success(bad, ref, 0.5)
    with pytest.raises(ValueError):
        tracking_success(ref[:10], ref, 0.5)


def test_tracking_success_matches_framewise_scan():
    for seed in range(20):
        rng = Rng(seed)
        a = rng.normal((25, 2)) * 0.3
        b = rng.normal((25, 2)) * 0.3
        got = tracking_success(a, b, 0.5)
        brute = all(np.linalg.norm(a[t] - b[t]) <= 0.5 for t in range(25))
        assert got == brute


def test_perturbation_success_cases():
    n = 360
    onset = 50
    upright = np.zeros((n, 1))
    assert perturbation_success(upright, upright, onset, CFG)[0]
    fallen = np.full((n, 1), 2.0)
    fallen_unwrapped = fallen.copy()
    assert not perturbation_success(fallen, fallen_unwrapped, onset, CFG)[0]


def test_perturbation_success_framewise_equality():
    from pdp.envs import fallen_mask

    rng = Rng(5)
    theta = rng.normal((360, 16)) * 1.2
    unwrapped = np.cumsum(rng.normal((360, 16)) * 0.05, axis=0)
    onset = 50
    window = int(CFG.post_onset_window / CFG.dt)
    end = min(theta.shape[0], onset + window + 1)
    expect = ~fallen_mask(CFG, theta[:end], start_step=onset, unwrapped=unwrapped[:end])
    got = perturbation_success(theta, unwrapped, onset, CFG)
    np.testing.assert_array_equal(got, expect)


# ---------------------------------------------------------------------------
# recovery signatures and modes
# ---------------------------------------------------------------------------


def _scripted_rollouts(direction, knock=2.6, n=8, seed=0):
    from pdp.envs import scripted_recovery_torque

    cfg = CFG
    rng = Rng(seed)
    offs = np.stack([np.full(n, knock) + rng.uniform((n,)) * 0.1, rng.uniform((n,)) * 0.2], axis=1)

    def act(obs, t):
        theta = np.arctan2(obs[:, 0], obs[:, 1])
        return np.array([[scripted_recovery_torque(cfg, th, om, direction)] for th, om in zip(theta, obs[:, 2])])

    return rollout_pendulum(cfg, act, [None] * n, offs, 400)


def test_mode_histogram_scripted_controllers():
    cfg = CFG
    for direction, mode in ((+1, "ccw"), (-1, "cw")):
        out = _scripted_rollouts(direction)
        sigs = [
            recovery_signature(out["theta"][:, b], out["omega"][:, b], out["unwrapped"][:, b], 0, cfg)
            for b in range(out["theta"].shape[1])
        ]
        hist = mode_histogram(sigs)
        assert hist[mode] == len(sigs), hist


def test_mode_histogram_mirror_symmetry():
    cfg = CFG
    out_p = _scripted_rollouts(+1, knock=2.6, seed=3)
    out_m = _scripted_rollouts(-1, knock=2.6, seed=3)
    # mirrored controllers on mirrored knocks: per-rollout windings negate
    sig_p = [recovery_signature(out_p["theta"][:, b], out_p["omega"][:, b], out_p["unwrapped"][:, b], 0, cfg)
             for b in range(8)]
    # mirror the negative-direction run by flipping angles
    sig_m = [recovery_signature(-out_m["theta"][:, b], -out_m["omega"][:, b], -out_m["unwrapped"][:, b], 0, cfg)
             for b in range(8)]
    h_p = mode_histogram(sig_p)
    h_m = mode_histogram(sig_m)
    assert h_p["ccw"] == h_m["ccw"] == 8


def test_mode_matches_unwrap_oracle():
    cfg = CFG
    for direction in (+1, -1):
        out = _scripted_rollouts(direction, seed=9)
        for b in range(out["theta"].shape[1]):
            sig = recovery_signature(out["theta"][:, b], out["omega"][:, b], out["unwrapped"][:, b], 0, cfg)
            assert sig is not None
            oracle = winding_mode_oracle(out["theta"][:, b], 0, sig.entry_step, cfg.upright_band)
            assert sig.mode == oracle


def test_unterminated_recovery_excluded():
    hist = mode_histogram([None, None])
    assert hist["failed"] == 2
    assert hist["cw"] == hist["ccw"] == hist["direct"] == 0


def test_direct_mode_for_small_knock():
    cfg = CFG
    from pdp.envs import scripted_recovery_torque

    n = 4
    offs = np.stack([np.full(n, 0.4), np.zeros(n)], axis=1)

    def act(obs, t):
        theta = np.arctan2(obs[:, 0], obs[:, 1])
        return np.array([[scripted_recovery_torque(cfg, th, om, +1)] for th, om in zip(theta, obs[:, 2])])

    out = rollout_pendulum(cfg, act, [None] * n, offs, 200)
    sigs = [recovery_signature(out["theta"][:, b], out["omega"][:, b], out["unwrapped"][:, b], 0, cfg)
            for b in range(n)]
    assert mode_histogram(sigs)["direct"] == n
