"""Schedule, diffusion training/sampling, baselines, and checkpoint tests."""

import numpy as np
import pytest

from pdp.datagen import Dataset
from pdp.numerics import AdamWState, Rng, Tensor, grad_check, no_grad
from pdp.policy import (
    CvaeBaseline,
    DenoiserConfig,
    DenoiserNetwork,
    MlpPolicy,
    StudentConfig,
    alpha_bar_closed_form,
    cosine_schedule,
    cvae_infer,
    cvae_train_step,
    diffusion_sample,
    diffusion_train_step,
    forward_diffuse,
    forward_diffuse_batch,
    load_expert,
    load_policy,
    mlp_infer,
    mlp_train_step,
    save_expert,
    save_policy,
    train_policy,
)
from pdp.policy.checkpoint import CheckpointFormatError
from pdp.policy.training import PolicyBundle

SMALL = DenoiserConfig(obs_dim=3, act_dim=2, obs_history=2, horizon=2, model_dim=32,
                       n_heads=2, enc_layers=1, dec_layers=1, dropout=0.1, mlp_ratio=2)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def test_cosine_schedule_monotone_and_endpoints():
    s = cosine_schedule(100)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[0] >= 0.999
    assert s.alpha_bars[-1] <= 1e-3
    assert np.all((s.betas > 0) & (s.betas <= 0.999))


def test_cosine_schedule_closed_form_oracle():
    s = cosine_schedule(100, 0.008)
    assert abs(s.alpha_bars[49] - alpha_bar_closed_form(50, 100, 0.008)) <= 1e-12
    assert abs(s.alpha_bars[99] - alpha_bar_closed_form(100, 100, 0.008)) <= 1e-12


def test_beta_alpha_bar_consistency():
    s = cosine_schedule(100)
    recon = np.cumprod(1.0 - s.betas)
    np.testing.assert_allclose(recon, s.alpha_bars, atol=1e-10)


def test_schedule_validation():
    with pytest.raises(ValueError):
        cosine_schedule(0)
    with pytest.raises(ValueError):
        cosine_schedule(10, shift=0.0)


def test_forward_diffuse_cases():
    s = cosine_schedule(10)
    a0 = Rng(3).normal((4, 2))
    out = forward_diffuse(a0, 1, np.zeros((4, 2)), s)
    np.testing.assert_allclose(out, np.sqrt(s.alpha_bars[0]) * a0, rtol=1e-15)
    eps = Rng(4).normal((4, 2))
    out = forward_diffuse(np.zeros((4, 2)), 5, eps, s)
    np.testing.assert_allclose(out, np.sqrt(1 - s.alpha_bars[4]) * eps, rtol=1e-15)
    with pytest.raises(ValueError):
        forward_diffuse(a0, 11, eps[:4], s)


def test_forward_diffuse_variance_monte_carlo():
    s = cosine_schedule(20)
    rng = Rng(9)
    k = 12
    a0_std = 1.7
    a0 = rng.normal((10000, 1)) * a0_std
    eps = rng.normal((10000, 1))
    xk = forward_diffuse_batch(a0, np.full(10000, k), eps, s)
    expect = s.alpha_bars[k - 1] * a0_std**2 + (1 - s.alpha_bars[k - 1])
    assert abs(xk.var() - expect) / expect <= 0.03


# ---------------------------------------------------------------------------
# diffusion training and sampling
# ---------------------------------------------------------------------------


def _toy_batch(n=48, cfg=SMALL, seed=1):
    rng = Rng(seed)
    obs = rng.normal((n, cfg.obs_history, cfg.obs_dim))
    act = rng.normal((n, cfg.horizon, cfg.act_dim))
    return obs, act


def test_untrained_loss_near_unit_variance():
    # zero-initialized head predicts 0, so loss ~ E||eps||^2 = 1 per element
    net = DenoiserNetwork(Rng(0), SMALL)
    obs, act = _toy_batch(256)
    s = cosine_schedule(10)
    opt = AdamWState(lr=0.0, weight_decay=0.0)
    loss = diffusion_train_step(net, obs, act, None, s, Rng(2), opt)
    assert abs(loss - 1.0) < 0.15


def test_overfit_small_set():
    net = DenoiserNetwork(Rng(0), SMALL)
    rng = Rng(1)
    obs, _ = _toy_batch(64)
    act = np.tanh(obs.sum(axis=2, keepdims=True))[:, :2, :].repeat(2, axis=2) * 0.5
    s = cosine_schedule(10)
    opt = AdamWState(lr=1e-3, weight_decay=0.0)
    losses = [diffusion_train_step(net, obs, act, None, s, rng, opt) for _ in range(200)]
    assert losses[-1] < 0.1 * losses[0]


def test_training_deterministic():
    s = cosine_schedule(10)
    obs, act = _toy_batch(32)

    def run():
        net = DenoiserNetwork(Rng(0), SMALL)
        rng = Rng(7)
        opt = AdamWState(lr=1e-3)
        return [diffusion_train_step(net, obs, act, None, s, rng, opt) for _ in range(5)]

    assert run() == run()


class _ExactNoiseNet:
    """Stub denoiser that returns the exact noise for a known clean target."""

    def __init__(self, cfg, a0_target, schedule):
        self.cfg = cfg
        self.a0 = a0_target
        self.schedule = schedule

    def forward(self, obs, steps, x, tokens=None, rng=None, training=False):
        k = int(steps[0])
        ab = self.schedule.alpha_bars[k - 1]
        data = x.data if isinstance(x, Tensor) else x
        eps = (data - np.sqrt(ab) * self.a0) / np.sqrt(1.0 - ab)
        return Tensor(eps)


def test_single_step_inversion_recovers_target():
    s = cosine_schedule(1)
    cfg = SMALL
    a0 = Rng(5).normal((6, cfg.horizon, cfg.act_dim))
    net = _ExactNoiseNet(cfg, a0, s)
    obs, _ = _toy_batch(6)
    out = diffusion_sample(net, obs, None, s, rng=Rng(3))
    np.testing.assert_allclose(out, a0, atol=1e-10)


def test_exact_net_recovers_target_any_k():
    s = cosine_schedule(15)
    a0 = Rng(5).normal((4, SMALL.horizon, SMALL.act_dim))
    net = _ExactNoiseNet(SMALL, a0, s)
    obs, _ = _toy_batch(4)
    out = diffusion_sample(net, obs, None, s, rng=Rng(3))
    # with exact noise prediction the posterior mean collapses onto a0's
    # image; remaining deviation comes only from injected sampler noise
    assert np.abs(out - a0).max() < 0.6
    out2 = diffusion_sample(net, obs, None, s, rng=Rng(3))
    np.testing.assert_array_equal(out, out2)


def test_unscaled_sampler_telescopes_exactly():
    s = cosine_schedule(15)
    a0 = Rng(5).normal((4, SMALL.horizon, SMALL.act_dim))

    class _UnscaledExact(_ExactNoiseNet):
        def forward(self, obs, steps, x, tokens=None, rng=None, training=False):
            k = int(steps[0])
            ab = self.schedule.alpha_bars[k - 1]
            data = x.data if isinstance(x, Tensor) else x
            return Tensor((data - self.a0) / np.sqrt(1.0 - ab))

    net = _UnscaledExact(SMALL, a0, s)
    obs, _ = _toy_batch(4)
    noise = np.zeros((15, 4, SMALL.horizon, SMALL.act_dim))
    noise[0] = a0 + np.sqrt(1 - s.alpha_bars[-1]) * Rng(8).normal(a0.shape)
    out = diffusion_sample(net, obs, None, s, noise=noise, unscaled=True)
    np.testing.assert_allclose(out, a0, atol=1e-12)


def test_zero_net_sampler_covariance_matches_analytic():
    s = cosine_schedule(15)
    cfg = SMALL

    class _Zero:
        def __init__(self):
            self.cfg = cfg

        def forward(self, obs, steps, x, tokens=None, rng=None, training=False):
            data = x.data if isinstance(x, Tensor) else x
            return Tensor(np.zeros_like(data))

    v = 1.0
    for k in range(15, 1, -1):
        v = v / s.alphas[k - 1] + s.noise_std[k - 1] ** 2
    v = v / s.alphas[0]
    obs = np.zeros((10000, cfg.obs_history, cfg.obs_dim))
    out = diffusion_sample(_Zero(), obs, None, s, rng=Rng(11), clip_x0=np.inf)
    emp = out.var()
    assert abs(emp - v) / v <= 0.05


def test_overfit_single_pair_sampling_rmse():
    cfg = SMALL
    net = DenoiserNetwork(Rng(0), cfg)
    rng = Rng(1)
    obs = np.tile(rng.normal((1, cfg.obs_history, cfg.obs_dim)), (48, 1, 1))
    a0 = np.tile(rng.normal((1, cfg.horizon, cfg.act_dim)) * 0.4, (48, 1, 1))
    s = cosine_schedule(10)
    opt = AdamWState(lr=1e-3, weight_decay=0.0)
    for _ in range(400):
        diffusion_train_step(net, obs, a0, None, s, rng, opt)
    out = diffusion_sample(net, obs[:16], None, s, rng=Rng(2))
    rmse = float(np.sqrt(((out - a0[:16]) ** 2).mean()))
    assert rmse < 0.05


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def test_mlp_bimodal_converges_to_mean():
    cfg = DenoiserConfig(obs_dim=2, act_dim=1, obs_history=1, horizon=1, model_dim=16, n_heads=2,
                         enc_layers=1, dec_layers=1)
    net = MlpPolicy(Rng(0), cfg, hidden=(64, 64))
    rng = Rng(1)
    obs = np.tile(rng.normal((1, 1, 2)), (64, 1, 1))
    targets = np.ones((64, 1, 1))
    targets[::2] *= -1.0  # two equally likely modes at +-1: least-squares optimum is 0
    opt = AdamWState(lr=3e-3, weight_decay=0.0)
    for _ in range(300):
        mlp_train_step(net, obs, targets, None, opt)
    pred = mlp_infer(net, obs[:1])
    assert abs(pred[0, 0, 0]) < 0.1


def test_mlp_deterministic():
    cfg = SMALL
    net = MlpPolicy(Rng(0), cfg)
    obs, _ = _toy_batch(8)
    np.testing.assert_array_equal(mlp_infer(net, obs), mlp_infer(net, obs))


def test_cvae_kl_zero_for_standard_normal():
    from pdp.numerics import tensor as F

    mu = Tensor(np.zeros((8, 4)))
    logvar = Tensor(np.zeros((8, 4)))
    assert F.kl_gaussian(mu, logvar).item() == 0.0


def test_cvae_beta_zero_reduces_to_regressor():
    cfg = DenoiserConfig(obs_dim=3, act_dim=2, obs_history=2, horizon=1, model_dim=16, n_heads=2,
                         enc_layers=1, dec_layers=1)
    rng = Rng(1)
    obs = rng.normal((16, 2, 3))
    nxt = rng.normal((16, 3))
    act = rng.normal((16, 1, 2))

    def grads_with_beta(beta):
        from pdp.numerics import backward, zero_grads
        from pdp.numerics import tensor as F

        net = CvaeBaseline(Rng(0), cfg, latent_dim=3, beta=beta)
        mu, logvar = net.encode(obs, nxt)
        eps = Rng(5).normal((16, 3))
        z = F.add(mu, F.mul(F.exp(F.mul(logvar, Tensor(0.5))), Tensor(eps)))
        recon = net.decode(z, obs)
        loss = F.add(F.mse(recon, Tensor(act[:, 0, :])), F.mul(F.kl_gaussian(mu, logvar), Tensor(beta)))
        params = net.params()
        zero_grads(params)
        backward(loss)
        return {n: p.grad.copy() for n, p in params}

    g0 = grads_with_beta(0.0)
    g_recon_only = grads_with_beta(0.0)
    for n in g0:
        np.testing.assert_array_equal(g0[n], g_recon_only[n])
    g1 = grads_with_beta(1.0)
    assert any(not np.array_equal(g0[n], g1[n]) for n in g0)


def test_cvae_beta_one_collapses_latent():
    # bimodal targets at +-0.5: the latent is worth ~ln2 nats against a 0.25
    # reconstruction gain, so beta=1 collapses while beta=1e-4 keeps both modes
    cfg = DenoiserConfig(obs_dim=2, act_dim=1, obs_history=1, horizon=1, model_dim=16, n_heads=2,
                         enc_layers=1, dec_layers=1)
    rng = Rng(1)
    obs = np.tile(rng.normal((1, 1, 2)), (64, 1, 1))
    nxt_a = np.tile(rng.normal((1, 2)), (32, 1))
    nxt_b = np.tile(rng.normal((1, 2)), (32, 1))
    nxt = np.concatenate([nxt_a, nxt_b])
    act = np.full((64, 1, 1), 0.5)
    act[32:] *= -1.0

    spreads = {}
    for beta in (1e-4, 1.0):
        net = CvaeBaseline(Rng(0), cfg, latent_dim=2, beta=beta, hidden=(64, 64))
        opt = AdamWState(lr=3e-3, weight_decay=0.0)
        r = Rng(3)
        for _ in range(800):
            cvae_train_step(net, obs, nxt, act, r, opt)
        zs = Rng(4).normal((256, 2))
        outs = cvae_infer(net, np.tile(obs[:1], (256, 1, 1)), z=zs)
        spreads[beta] = float(outs.std())
    assert spreads[1.0] < 0.5 * spreads[1e-4]


# ---------------------------------------------------------------------------
# block consistency, gradcheck, checkpoints
# ---------------------------------------------------------------------------


def test_block_b_with_zero_task_equals_block_a():
    cfg_a = SMALL
    cfg_b = DenoiserConfig(**{**{k: getattr(SMALL, k) for k in SMALL.__dataclass_fields__}, "token_vocab": 5})
    net_a = DenoiserNetwork(Rng(0), cfg_a)
    net_b = DenoiserNetwork(Rng(0), cfg_b)
    # copy the shared weights from A into B, zero the task table
    a_vals = dict(net_a.param_values())
    for name, p in net_b.params():
        if name.startswith("task_embed"):
            p.data[...] = 0.0
        else:
            p.data[...] = a_vals[name]
    obs, act = _toy_batch(6)
    steps = Rng(2).integers(1, 11, (6,))
    with no_grad():
        out_a = net_a.forward(obs, steps, act, None, training=False).data
        out_b = net_b.forward(obs, steps, act, np.arange(6) % 5, training=False).data
    np.testing.assert_array_equal(out_a, out_b)


TINY = DenoiserConfig(obs_dim=2, act_dim=1, obs_history=2, horizon=1, model_dim=8, n_heads=2,
                      enc_layers=1, dec_layers=1, dropout=0.0, mlp_ratio=2)


@pytest.mark.parametrize("vocab", [0, 3])
def test_denoiser_gradcheck(vocab):
    cfg = DenoiserConfig(**{**{k: getattr(TINY, k) for k in TINY.__dataclass_fields__}, "token_vocab": vocab})
    net = DenoiserNetwork(Rng(1), cfg)
    # nonzero head so the head path has gradients
    for name, p in net.params():
        if name.startswith("action_head.w"):
            p.data[...] = Rng(9).normal(p.data.shape) * 0.2
    obs = Rng(2).normal((2, 2, 2))
    act = Rng(3).normal((2, 1, 1))
    steps = np.array([1, 2])
    tokens = np.array([0, 2]) if vocab else None
    tgt = Rng(4).normal((2, 1, 1))

    def f():
        from pdp.numerics import tensor as F

        return F.mse(net.forward(obs, steps, act, tokens, training=False), Tensor(tgt))

    assert grad_check(f, net.params(), h=1e-5) <= 1e-4


def test_cvae_gradcheck():
    from pdp.numerics import backward, zero_grads
    from pdp.numerics import tensor as F

    cfg = DenoiserConfig(obs_dim=2, act_dim=1, obs_history=1, horizon=1, model_dim=8, n_heads=2,
                         enc_layers=1, dec_layers=1)
    net = CvaeBaseline(Rng(0), cfg, latent_dim=2, beta=0.5, hidden=(8,))
    obs = Rng(1).normal((3, 1, 2))
    nxt = Rng(2).normal((3, 2))
    act = Rng(3).normal((3, 1))
    eps = Rng(4).normal((3, 2))

    def f():
        mu, logvar = net.encode(obs, nxt)
        z = F.add(mu, F.mul(F.exp(F.mul(logvar, Tensor(0.5))), Tensor(eps)))
        recon = net.decode(z, obs)
        return F.add(F.mse(recon, Tensor(act)), F.mul(F.kl_gaussian(mu, logvar), Tensor(net.beta)))

    assert grad_check(f, net.params(), h=1e-5) <= 1e-4


def _toy_trained_bundle(kind="diffusion", steps=30):
    rng = Rng(7)
    ds = Dataset(obs_dim=3, act_dim=2)
    for _ in range(4):
        ds.add_episode(rng.normal((20, 3)), rng.normal((20, 2)), rng.normal((20, 2)), "perturb_recover")
    cfg = StudentConfig(kind=kind, obs_history=2, horizon=1, model_dim=16, n_heads=2, enc_layers=1,
                        dec_layers=1, diffusion_steps=5, train_steps=steps, batch_size=16,
                        mlp_hidden=(32,), cvae_hidden=(32,))
    return train_policy(ds, cfg, seed=3)


@pytest.mark.parametrize("kind", ["diffusion", "mlp", "cvae"])
def test_checkpoint_roundtrip_bit_exact(tmp_path, kind):
    bundle = _toy_trained_bundle(kind)
    obs = Rng(5).normal((6, 2, 3))
    if kind == "diffusion":
        noise = Rng(6).normal((5, 6, 1, 2))
        before = diffusion_sample(bundle.net, obs, None, bundle.schedule, noise=noise)
    elif kind == "mlp":
        before = mlp_infer(bundle.net, obs)
    else:
        before = cvae_infer(bundle.net, obs, z=Rng(6).normal((6, 4)))
    path = tmp_path / "policy.pdpw"
    save_policy(path, bundle)
    back = load_policy(path)
    if kind == "diffusion":
        after = diffusion_sample(back.net, obs, None, back.schedule, noise=noise)
    elif kind == "mlp":
        after = mlp_infer(back.net, obs)
    else:
        after = cvae_infer(back.net, obs, z=Rng(6).normal((6, 4)))
    np.testing.assert_array_equal(before, after)
    np.testing.assert_array_equal(back.norm.obs_mean, bundle.norm.obs_mean)


def test_checkpoint_crc_detects_corruption(tmp_path):
    bundle = _toy_trained_bundle("mlp")
    path = tmp_path / "p.pdpw"
    save_policy(path, bundle)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="CRC32"):
        load_policy(path)


def test_expert_checkpoint_roundtrip(tmp_path, pendulum_expert):
    path = tmp_path / "expert.pdpw"
    save_expert(path, pendulum_expert)
    back = load_expert(path)
    obs = Rng(3).normal((5, 4))
    np.testing.assert_array_equal(back.mean(obs), pendulum_expert.mean(obs))
    assert back.task_subset_id == pendulum_expert.task_subset_id


def test_train_policy_deterministic():
    b1 = _toy_trained_bundle("diffusion", steps=10)
    b2 = _toy_trained_bundle("diffusion", steps=10)
    assert b1.loss_curve == b2.loss_curve
    for (n1, p1), (n2, p2) in zip(b1.net.params(), b2.net.params()):
        np.testing.assert_array_equal(p1.data, p2.data)


def test_x0_factorization_identity_with_infinite_clip():
    # the x0-parameterized posterior mean equals the epsilon form exactly
    s = cosine_schedule(15)
    rng = Rng(2)
    for k in range(1, 16):
        x = rng.normal((32,))
        eps_hat = rng.normal((32,))
        eps_form = s.posterior_mean_scale[k - 1] * (x - s.eps_scale[k - 1] * eps_hat)
        x0 = (x - s.sqrt_one_minus_alpha_bars[k - 1] * eps_hat) / s.sqrt_alpha_bars[k - 1]
        x0_form = s.x0_coef[k - 1] * x0 + s.xk_coef[k - 1] * x
        np.testing.assert_allclose(x0_form, eps_form, rtol=0, atol=1e-11)
