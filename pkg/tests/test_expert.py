"""PPO machinery tests: rewards, GAE, clipped surrogate, determinism."""

import numpy as np
import pytest

from pdp.envs import EnvState, MotionLibraryConfig, PendulumConfig, Perturbation, motion_library
from pdp.expert import (
    ExpertPolicy,
    PpoConfig,
    TrackingRewardConfig,
    gae,
    normalize_advantages,
    ppo_update,
    tracking_reward,
    train_pendulum_expert,
)
from pdp.numerics import AdamWState, Rng, Tensor
from pdp.numerics import tensor as F


def _state(q, v):
    return EnvState(q=np.asarray(q, dtype=float), v=np.asarray(v, dtype=float))


def test_tracking_reward_on_reference_is_max():
    lib = motion_library(MotionLibraryConfig(seed=1, count_per_family=1))
    ref = lib[0]
    cfg = TrackingRewardConfig()
    st = _state(ref.positions[5], ref.velocities[5])
    assert tracking_reward(st, ref, 5, cfg) == pytest.approx(cfg.w_p + cfg.w_v)
    far = _state(ref.positions[5] + 100.0, ref.velocities[5] + 100.0)
    assert tracking_reward(far, ref, 5, cfg) < 1e-9


def test_tracking_reward_hand_value():
    # dx=(0.1,0), dv=0, w_p=w_v=0.5, k_p=10, k_v=1 -> 0.5*exp(-0.1)+0.5
    lib = motion_library(MotionLibraryConfig(seed=1, count_per_family=1))
    ref = lib[0]
    st = _state(ref.positions[0] - np.array([0.1, 0.0]), ref.velocities[0])
    got = tracking_reward(st, ref, 0, TrackingRewardConfig(w_p=0.5, w_v=0.5, k_p=10.0, k_v=1.0))
    assert got == pytest.approx(0.5 * np.exp(-0.1) + 0.5, rel=1e-12)


def test_gae_hand_recursion():
    adv, ret = gae([1.0, 1.0], [0.5, 0.5], 0.0, gamma=0.99, lam=0.95)
    np.testing.assert_allclose(adv, [1.46525, 0.5], rtol=1e-12)
    np.testing.assert_allclose(ret, [1.96525, 1.0], rtol=1e-12)


def test_gae_lambda_zero_is_td_error():
    rng = Rng(4)
    r, v = rng.normal((12,)), rng.normal((12,))
    boot = 0.3
    adv, _ = gae(r, v, boot, gamma=0.9, lam=0.0)
    v_next = np.append(v[1:], boot)
    np.testing.assert_allclose(adv, r + 0.9 * v_next - v, rtol=1e-12)


def test_gae_zero_inputs():
    adv, ret = gae(np.zeros(5), np.zeros(5), 0.0, 0.99, 0.95)
    assert not adv.any() and not ret.any()


def test_gae_reward_to_go_property():
    # lam=1, gamma=1, zero values reduces to suffix sums (brute force oracle)
    for seed in range(10):
        r = Rng(seed).normal((10,))
        adv, ret = gae(r, np.zeros(10), 0.0, gamma=1.0, lam=1.0)
        suffix = np.array([r[i:].sum() for i in range(10)])
        np.testing.assert_allclose(adv, suffix, atol=1e-12)
        np.testing.assert_allclose(ret, suffix, atol=1e-12)


def test_gae_done_mask_blocks_bootstrap():
    r = np.array([1.0, 1.0])
    v = np.array([0.0, 0.0])
    adv, _ = gae(r, v, 100.0, gamma=0.99, lam=0.95, dones=[0.0, 1.0])
    # terminal at t=1: no bootstrap leaks through
    np.testing.assert_allclose(adv[1], 1.0)
    np.testing.assert_allclose(adv[0], 1.0 + 0.99 * 0.0 - 0.0 + 0.99 * 0.95 * 1.0)


def test_clipped_surrogate_arithmetic():
    adv = Tensor(np.array([2.0, 2.0]))
    # min(rho*A, clip(rho)*A): at rho=1 the clip is inactive; at rho=2 the
    # clipped branch 1.2*A wins; at rho=0.5 the raw branch 0.5*A is smaller
    for rho, expect in [(1.0, 2.0), (2.0, 1.2 * 2.0), (0.5, 0.5 * 2.0)]:
        ratio = Tensor(np.array([rho, rho]), requires_grad=True)
        surr = F.minimum(F.mul(ratio, adv), F.mul(F.clip(ratio, 0.8, 1.2), adv))
        np.testing.assert_allclose(surr.data, [expect, expect])


def test_advantage_normalization_invariant():
    adv = Rng(3).normal((512,)) * 7.3 + 2.0
    norm = normalize_advantages(adv)
    assert abs(norm.mean()) <= 1e-10
    assert abs(norm.std() - 1.0) <= 1e-8


def _synthetic_batch(policy, n=128, seed=0):
    rng = Rng(seed)
    obs = rng.normal((n, policy.obs_dim))
    act, logp = policy.sample(obs, rng)
    adv = normalize_advantages(rng.normal((n,)))
    ret = rng.normal((n,))
    return {"obs": obs, "act": act, "logp": logp, "adv": adv, "ret": ret}


def _batch_loss(policy, batch, cfg):
    obs_t = Tensor(batch["obs"])
    logp = policy.log_prob_t(obs_t, batch["act"])
    ratio = F.exp(F.sub(logp, Tensor(batch["logp"])))
    adv_t = Tensor(batch["adv"])
    surr = F.minimum(F.mul(ratio, adv_t), F.mul(F.clip(ratio, 1 - cfg.clip, 1 + cfg.clip), adv_t))
    v = F.reshape(policy.critic(obs_t), (batch["obs"].shape[0],))
    return -F.mean(surr).item() + cfg.value_coef * F.mse(v, Tensor(batch["ret"])).item()


def test_ppo_ratio_is_one_before_update():
    policy = ExpertPolicy(Rng(7), obs_dim=4, act_dim=1)
    batch = _synthetic_batch(policy)
    logp_now = policy.log_prob_np(policy.mean(batch["obs"]), batch["act"])
    np.testing.assert_allclose(np.exp(logp_now - batch["logp"]), 1.0, rtol=1e-12)


def test_ppo_update_decreases_loss_on_fixed_batch():
    policy = ExpertPolicy(Rng(7), obs_dim=4, act_dim=1)
    cfg = PpoConfig(mini_epochs=4, batch_size=64)
    batch = _synthetic_batch(policy)
    before = _batch_loss(policy, batch, cfg)
    ppo_update(policy, batch, cfg, AdamWState(lr=cfg.actor_lr, weight_decay=0.0),
               AdamWState(lr=cfg.critic_lr, weight_decay=0.0), Rng(5))
    after = _batch_loss(policy, batch, cfg)
    assert after < before


def test_ppo_update_rejects_nonfinite():
    policy = ExpertPolicy(Rng(7), obs_dim=4, act_dim=1)
    cfg = PpoConfig(mini_epochs=1, batch_size=64)
    batch = _synthetic_batch(policy)
    batch["ret"] = np.full_like(batch["ret"], np.nan)
    with pytest.raises(RuntimeError, match="non-finite"):
        ppo_update(policy, batch, cfg, AdamWState(lr=1e-3), AdamWState(lr=1e-3), Rng(5))


def test_train_expert_deterministic():
    env_cfg = PendulumConfig()
    cell = Perturbation(onset_time=1.0, magnitude=0.075, direction=1, duration=5)
    ppo = PpoConfig(iterations=3, num_envs=4, horizon_length=16, mini_epochs=2, batch_size=32, eval_every=100)
    p1, c1 = train_pendulum_expert(env_cfg, cell, ppo, seed=5, success_criterion=0.0)
    p2, c2 = train_pendulum_expert(env_cfg, cell, ppo, seed=5, success_criterion=0.0)
    for (n1, t1), (n2, t2) in zip(p1.params(), p2.params()):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)
    assert [e["mean_reward"] for e in c1] == [e["mean_reward"] for e in c2]
