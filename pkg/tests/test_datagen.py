"""Sampling-strategy semantics, windowing, and dataset file format tests."""

import numpy as np
import pytest

from pdp.datagen import (
    Dataset,
    DatasetFormatError,
    ExpertTaskMismatch,
    SamplingStrategy,
    WindowError,
    collect_perturb,
    collect_tracking,
    recovery_episodes,
)
from pdp.numerics import Rng


def _shard(expert, cfg, cell, kind, sigma, seed=0, max_t=600):
    return collect_perturb(expert, cfg, cell, SamplingStrategy(kind, sigma), Rng(seed), max_t)


def _flat(ds):
    obs = np.concatenate([ds.episode_arrays(e)[0] for e in range(ds.n_episodes)])
    sto = np.concatenate([ds.episode_arrays(e)[1] for e in range(ds.n_episodes)])
    exe = np.concatenate([ds.episode_arrays(e)[2] for e in range(ds.n_episodes)])
    return obs, sto, exe


def test_sigma_zero_strategies_identical(pendulum_expert, pend_cfg, high_cell):
    shards = [_shard(pendulum_expert, pend_cfg, high_cell, kind, 0.0) for kind in ("CleanClean", "NoisyNoisy", "NoisyClean")]
    ref_obs, ref_sto, ref_exe = _flat(shards[0])
    for ds in shards[1:]:
        obs, sto, exe = _flat(ds)
        np.testing.assert_array_equal(obs, ref_obs)
        np.testing.assert_array_equal(sto, ref_sto)
        np.testing.assert_array_equal(exe, ref_exe)


def test_noisy_clean_stored_is_fresh_expert_query(pendulum_expert, pend_cfg, high_cell):
    ds = _shard(pendulum_expert, pend_cfg, high_cell, "NoisyClean", 0.12)
    obs, sto, _ = _flat(ds)
    fresh = pendulum_expert.env_action(pendulum_expert.mean(obs))
    np.testing.assert_array_equal(sto, fresh)


def test_noisy_noisy_stores_executed(pendulum_expert, pend_cfg, high_cell):
    ds = _shard(pendulum_expert, pend_cfg, high_cell, "NoisyNoisy", 0.12)
    _, sto, exe = _flat(ds)
    np.testing.assert_array_equal(sto, exe)
    clean = _shard(pendulum_expert, pend_cfg, high_cell, "CleanClean", 0.12)
    _, c_sto, c_exe = _flat(clean)
    np.testing.assert_array_equal(c_sto, c_exe)


def test_noise_statistics(pendulum_expert, pend_cfg, high_cell):
    # executed - stored ~ N(0, (sigma*scale)^2) where not clipped; use a small
    # sigma so clipping is negligible at the tanh-squashed means
    sigma = 0.05
    ds = _shard(pendulum_expert, pend_cfg, high_cell, "NoisyClean", sigma, max_t=12000)
    _, sto, exe = _flat(ds)
    diff = (exe - sto) / pendulum_expert.action_scale
    unclipped = np.abs(exe / pendulum_expert.action_scale) < 0.999
    d = diff[unclipped]
    n = d.shape[0]
    assert n >= 10000
    assert abs(d.mean()) <= 3 * sigma / np.sqrt(n)
    assert abs(d.std() - sigma) <= 0.1 * sigma


def test_noisy_clean_widens_coverage(pendulum_expert, pend_cfg, high_cell):
    clean_ref = _shard(pendulum_expert, pend_cfg, high_cell, "CleanClean", 0.0, seed=1, max_t=3000)
    clean2 = _shard(pendulum_expert, pend_cfg, high_cell, "CleanClean", 0.0, seed=2, max_t=3000)
    noisy = _shard(pendulum_expert, pend_cfg, high_cell, "NoisyClean", 0.12, seed=2, max_t=3000)
    ref_obs = _flat(clean_ref)[0]

    def mean_min_dist(ds):
        obs = _flat(ds)[0]
        sub = obs[:: max(1, len(obs) // 500)]
        d = np.linalg.norm(sub[:, None, :] - ref_obs[None, :, :], axis=2)
        return d.min(axis=1).mean()

    assert mean_min_dist(noisy) > mean_min_dist(clean2)


def test_clean_shards_duplicate_bit_identical(pendulum_expert, pend_cfg, high_cell):
    a = _shard(pendulum_expert, pend_cfg, high_cell, "CleanClean", 0.0, seed=5)
    b = _shard(pendulum_expert, pend_cfg, high_cell, "CleanClean", 0.0, seed=5)
    assert a.content_hash() == b.content_hash()


def test_recovery_episodes_zero_offset_matches_plain_rollout(pendulum_expert, pend_cfg):
    rng = Rng(0)
    ds = recovery_episodes(pendulum_expert, pend_cfg, (0.0, 0.0), rng, count=1, length=30)
    obs, sto, _ = _flat(ds)
    # zero offset: same trajectory as stepping the expert from the origin
    theta, omega = 0.0, 0.0
    for t in range(30):
        o = np.array([[np.sin(theta), np.cos(theta), omega, 0.0]])
        np.testing.assert_allclose(obs[t], o[0], atol=1e-12)
        u = float(pendulum_expert.env_action(pendulum_expert.mean(o))[0, 0])
        np.testing.assert_allclose(sto[t], [u], atol=1e-12)
        u = np.clip(u, -pend_cfg.torque_limit, pend_cfg.torque_limit)
        omega = omega + pend_cfg.dt * (
            (pend_cfg.gravity / pend_cfg.length) * np.sin(theta) + u / pend_cfg.inertia - pend_cfg.damping * omega
        )
        theta = theta + pend_cfg.dt * omega


def test_recovery_episodes_widen_noise_band(pendulum_expert, pend_cfg, high_cell):
    clean = _shard(pendulum_expert, pend_cfg, high_cell, "CleanClean", 0.0, seed=1, max_t=3000)
    band = _shard(pendulum_expert, pend_cfg, high_cell, "NoisyClean", 0.12, seed=2, max_t=3000)
    rec = recovery_episodes(pendulum_expert, pend_cfg, (np.pi, 2.0), Rng(3), count=40, length=50)
    ref_obs = _flat(clean)[0]

    def min_dists(ds):
        obs = _flat(ds)[0][:: 5]
        d = np.linalg.norm(obs[:, None, :] - ref_obs[None, :, :], axis=2)
        return d.min(axis=1)

    assert min_dists(rec).mean() > np.median(min_dists(band))


def test_recovery_episodes_reproducible(pendulum_expert, pend_cfg):
    a = recovery_episodes(pendulum_expert, pend_cfg, (np.pi, 2.0), Rng(9), count=5, length=20)
    b = recovery_episodes(pendulum_expert, pend_cfg, (np.pi, 2.0), Rng(9), count=5, length=20)
    assert a.content_hash() == b.content_hash()


def test_expert_task_mismatch(pendulum_expert, pend_cfg, high_cell):
    from dataclasses import replace

    wrong = replace(high_cell, magnitude=0.5)
    with pytest.raises(ExpertTaskMismatch):
        collect_perturb(pendulum_expert, pend_cfg, wrong, SamplingStrategy("CleanClean"), Rng(0), 100)


def _toy_dataset(t_o=4, t_a=3):
    rng = Rng(7)
    ds = Dataset(obs_dim=3, act_dim=2, obs_history=t_o, action_horizon=t_a)
    for e, ln in enumerate([10, 7, 12]):
        ds.add_episode(rng.normal((ln, 3)), rng.normal((ln, 2)), rng.normal((ln, 2)), "perturb_recover", token=e)
    ds.finalize_normalization()
    return ds


def test_window_identity_case():
    ds = _toy_dataset(t_o=1, t_a=1)
    obs, act, token = ds.window(5, obs_history=1, action_horizon=1)
    tr = ds.transition(5)
    np.testing.assert_array_equal(obs[0], tr.obs)
    np.testing.assert_array_equal(act[0], tr.stored_action)
    assert token == tr.episode_id


def test_window_padding_rule():
    ds = _toy_dataset()
    obs, act, _ = ds.window(10, obs_history=4, action_horizon=2)  # first step of episode 1
    first = ds.transition(10).obs
    for i in range(4):
        np.testing.assert_array_equal(obs[i], first)
    obs2, _, _ = ds.window(12, obs_history=4, action_horizon=2)
    np.testing.assert_array_equal(obs2[0], first)  # still padded at local step 2
    np.testing.assert_array_equal(obs2[-1], ds.transition(12).obs)


def test_window_cross_episode_error():
    ds = _toy_dataset()
    with pytest.raises(WindowError):
        ds.window(9, obs_history=2, action_horizon=2)  # last step of episode 0


def test_valid_window_indices_match_bruteforce():
    ds = _toy_dataset(t_a=3)
    valid = set(ds.valid_window_indices().tolist())
    brute = set()
    for t in range(ds.n_transitions):
        try:
            ds.window(t)
            brute.add(t)
        except WindowError:
            pass
    assert valid == brute


def test_window_batch_matches_single():
    ds = _toy_dataset()
    idx = ds.valid_window_indices()
    ob, ab, tok = ds.window_batch(idx)
    for row, t in enumerate(idx):
        o, a, tk = ds.window(int(t))
        np.testing.assert_array_equal(ob[row], o)
        np.testing.assert_array_equal(ab[row], a)
        assert tok[row] == tk


def test_normalization_invariant():
    ds = _toy_dataset()
    f_obs = np.concatenate([ds.episode_arrays(e)[0] for e in range(ds.n_episodes)])
    z = (f_obs - ds.norm.obs_mean) / ds.norm.obs_std
    assert np.abs(z.mean(axis=0)).max() <= 1e-9
    assert np.abs(z.std(axis=0) - 1.0).max() <= 1e-6


def test_serialize_roundtrip_bit_exact(tmp_path):
    ds = _toy_dataset()
    path = tmp_path / "shard.pdpd"
    ds.save(path)
    back = Dataset.load(path)
    assert back.content_hash() == ds.content_hash()
    assert back.n_transitions == ds.n_transitions
    np.testing.assert_array_equal(back.norm.obs_mean, ds.norm.obs_mean)
    # windows re-extracted from the file match in-memory windows bit-exactly
    idx = ds.valid_window_indices()
    o1, a1, t1 = ds.window_batch(idx)
    o2, a2, t2 = back.window_batch(idx)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(t1, t2)


def test_corrupted_magic_rejected(tmp_path):
    ds = _toy_dataset()
    path = tmp_path / "shard.pdpd"
    ds.save(path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="magic"):
        Dataset.load(path)


def test_truncated_payload_rejected(tmp_path):
    ds = _toy_dataset()
    path = tmp_path / "shard.pdpd"
    ds.save(path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(DatasetFormatError, match="truncated"):
        Dataset.load(path)


def test_header_counts_match_payload(tmp_path):
    ds = _toy_dataset()
    path = tmp_path / "shard.pdpd"
    ds.save(path)
    back = Dataset.load(path)
    assert back.header_dict()["n_transitions"] == sum(
        back.episode_arrays(e)[0].shape[0] for e in range(back.n_episodes)
    )


def test_jsonl_export(tmp_path):
    ds = _toy_dataset()
    path = tmp_path / "shard.jsonl"
    ds.export_jsonl(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == ds.n_transitions
    import json

    row = json.loads(lines[0])
    assert set(row) == {"episode", "step", "task", "token", "obs", "stored", "executed"}


def test_tracking_collection_shapes(line_expert, pm_cfg, line_refs):
    train, _ = line_refs
    ds = collect_tracking(line_expert, pm_cfg, train[:2], SamplingStrategy("NoisyClean", 0.1), Rng(4), 300)
    assert ds.obs_dim == 8 and ds.act_dim == 2
    assert ds.n_transitions >= 300
    token_ds = collect_tracking(
        line_expert, pm_cfg, train[:2], SamplingStrategy("NoisyClean", 0.1), Rng(4), 300,
        store_token_obs=True, tokens=[0, 1],
    )
    assert token_ds.obs_dim == 4
    assert set(token_ds._ep_tokens) <= {0, 1}
