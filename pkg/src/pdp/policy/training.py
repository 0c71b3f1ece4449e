"""Training loops and samplers for the diffusion policy and baselines.

All networks operate in z-normalized observation/action space; bundles
carry the dataset stats so rollout adapters can denormalize. Training is
fully deterministic given the seed: diffusion steps and noise, dropout
masks, and minibatch draws all come from the one stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..datagen.dataset import Dataset, NormStats
from ..numerics import AdamWState, Rng, Tensor, adamw_step, backward, no_grad, zero_grads
from ..numerics import tensor as F
from .networks import CvaeBaseline, DenoiserConfig, DenoiserNetwork, MlpPolicy
from .schedule import NoiseSchedule, cosine_schedule, forward_diffuse_batch

POLICY_KINDS = ("diffusion", "mlp", "cvae")


@dataclass(frozen=True)
class StudentConfig:
    kind: str = "diffusion"
    obs_history: int = 4
    horizon: int = 1
    model_dim: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    dropout: float = 0.1
    mlp_ratio: int = 2
    diffusion_steps: int = 15
    schedule_shift: float = 0.008
    clip_x0: float = 3.0  # sampler clip on the implied clean action, normalized units
    unscaled_forward: bool = False  # literal additive noising, comparison only
    train_steps: int = 2500
    batch_size: int = 48
    lr: float = 1e-4
    weight_decay: float = 1e-3
    warmup: int = 100
    mlp_hidden: tuple[int, ...] = (256, 256)
    cvae_hidden: tuple[int, ...] = (256, 256)
    cvae_latent: int = 4
    cvae_beta: float = 1e-3

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; known: {POLICY_KINDS}")

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in
                ((k, getattr(self, k)) for k in self.__dataclass_fields__)}

    @staticmethod
    def from_json(d: dict) -> "StudentConfig":
        d = dict(d)
        for k in ("mlp_hidden", "cvae_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return StudentConfig(**d)


@dataclass
class PolicyBundle:
    kind: str
    config: StudentConfig
    denoiser_config: DenoiserConfig
    net: object
    norm: NormStats
    schedule: NoiseSchedule | None
    provenance: dict = field(default_factory=dict)
    loss_curve: list = field(default_factory=list)

    def normalize_obs(self, obs_window: np.ndarray) -> np.ndarray:
        return (obs_window - self.norm.obs_mean) / self.norm.obs_std

    def denormalize_act(self, act: np.ndarray) -> np.ndarray:
        return act * self.norm.act_std + self.norm.act_mean


# ---------------------------------------------------------------------------
# per-kind train steps
# ---------------------------------------------------------------------------


def diffusion_train_step(net: DenoiserNetwork, obs: np.ndarray, actions: np.ndarray,
                         tokens: np.ndarray | None, schedule: NoiseSchedule, rng: Rng,
                         opt: AdamWState, lr_scale: float = 1.0, unscaled: bool = False) -> float:
    """One MSE(eps, eps_theta(...)) step; k uniform per item, eps standard normal."""
    b = obs.shape[0]
    ks = rng.integers(1, schedule.num_steps + 1, (b,))
    eps = rng.normal(actions.shape)
    noisy = forward_diffuse_batch(actions, ks, eps, schedule, unscaled=unscaled)
    pred = net.forward(obs, ks, noisy, tokens, rng=rng, training=True)
    loss = F.mse(pred, Tensor(eps))
    val = loss.item()
    if not np.isfinite(val):
        raise RuntimeError(f"diffusion_train_step: non-finite loss {val} (batch {b}, k range {ks.min()}..{ks.max()})")
    params = net.params()
    zero_grads(params)
    backward(loss)
    adamw_step(params, opt, lr_scale=lr_scale)
    return val


def mlp_train_step(net: MlpPolicy, obs: np.ndarray, actions: np.ndarray, tokens: np.ndarray | None,
                   opt: AdamWState, lr_scale: float = 1.0) -> float:
    pred = net.forward(obs, tokens)
    loss = F.mse(pred, Tensor(actions))
    val = loss.item()
    if not np.isfinite(val):
        raise RuntimeError(f"mlp_train_step: non-finite loss {val}")
    params = net.params()
    zero_grads(params)
    backward(loss)
    adamw_step(params, opt, lr_scale=lr_scale)
    return val


def cvae_train_step(net: CvaeBaseline, obs: np.ndarray, next_obs: np.ndarray, actions: np.ndarray,
                    rng: Rng, opt: AdamWState, lr_scale: float = 1.0) -> tuple[float, float, float]:
    """Reconstruction MSE + beta * KL(q || N(0, I)); reparameterized sample."""
    mu, logvar = net.encode(obs, next_obs)
    eps = rng.normal(mu.shape)
    z = F.add(mu, F.mul(F.exp(F.mul(logvar, Tensor(0.5))), Tensor(eps)))
    recon = net.decode(z, obs)
    recon_loss = F.mse(recon, Tensor(actions[:, 0, :]))
    kl = F.kl_gaussian(mu, logvar)
    loss = F.add(recon_loss, F.mul(kl, Tensor(net.beta)))
    val = loss.item()
    if not np.isfinite(val):
        raise RuntimeError(f"cvae_train_step: non-finite loss {val}")
    params = net.params()
    zero_grads(params)
    backward(loss)
    adamw_step(params, opt, lr_scale=lr_scale)
    return val, recon_loss.item(), kl.item()


# ---------------------------------------------------------------------------
# samplers (reference numpy paths; pdp.kernels provides the fast equivalents)
# ---------------------------------------------------------------------------


def diffusion_sample(net: DenoiserNetwork, obs: np.ndarray, tokens: np.ndarray | None,
                     schedule: NoiseSchedule, rng: Rng | None = None, noise: np.ndarray | None = None,
                     unscaled: bool = False, clip_x0: float = 3.0) -> np.ndarray:
    """Normalized action window from the full reverse chain; no noise at the
    final step. Pass `noise` (K, B, T_a, act_dim) for externally-keyed draws.

    The posterior mean is evaluated through the predicted-x0 factorization
    (identical algebra to the 1/sqrt(alpha) epsilon form) so the implied
    clean action can be clipped to +-clip_x0 normalized units; without the
    clip a late-chain prediction error is amplified by 1/sqrt(alpha_K),
    which is ~30x when the final cosine beta saturates. Pass clip_x0=inf
    to recover the literal epsilon-form update.
    """
    cfg = net.cfg
    b = obs.shape[0]
    k_steps = schedule.num_steps
    if noise is None:
        if rng is None:
            raise ValueError("diffusion_sample needs rng or pregenerated noise")
        noise = rng.normal((k_steps, b, cfg.horizon, cfg.act_dim))
    if noise.shape != (k_steps, b, cfg.horizon, cfg.act_dim):
        raise ValueError(f"noise shape {noise.shape} != {(k_steps, b, cfg.horizon, cfg.act_dim)}")
    x = noise[0].copy()
    with no_grad():
        for i, k in enumerate(range(k_steps, 0, -1)):
            eps_hat = net.forward(obs, np.full(b, k, dtype=np.int64), x, tokens, training=False).data
            if unscaled:
                ab = schedule.alpha_bars[k - 1]
                ab_prev = schedule.alpha_bars[k - 2] if k > 1 else 1.0
                x = x - (math.sqrt(1.0 - ab) - math.sqrt(1.0 - ab_prev)) * eps_hat
            elif np.isinf(clip_x0):
                x = schedule.posterior_mean_scale[k - 1] * (x - schedule.eps_scale[k - 1] * eps_hat)
            else:
                x0_hat = (x - schedule.sqrt_one_minus_alpha_bars[k - 1] * eps_hat) / schedule.sqrt_alpha_bars[k - 1]
                x0_hat = np.clip(x0_hat, -clip_x0, clip_x0)
                x = schedule.x0_coef[k - 1] * x0_hat + schedule.xk_coef[k - 1] * x
            if k > 1:
                x = x + schedule.noise_std[k - 1] * noise[i + 1]
    return x


def mlp_infer(net: MlpPolicy, obs: np.ndarray, tokens: np.ndarray | None = None) -> np.ndarray:
    with no_grad():
        return net.forward(obs, tokens).data


def cvae_infer(net: CvaeBaseline, obs: np.ndarray, rng: Rng | None = None, z: np.ndarray | None = None) -> np.ndarray:
    """Decode a prior latent sample conditioned on the observation window."""
    b = obs.shape[0]
    if z is None:
        if rng is None:
            raise ValueError("cvae_infer needs rng or a latent sample")
        z = rng.normal((b, net.latent_dim))
    with no_grad():
        return net.decode(Tensor(z), obs).data[:, None, :]


# ---------------------------------------------------------------------------
# dataset-level training
# ---------------------------------------------------------------------------


def _normalized_batch(ds: Dataset, idx: np.ndarray, cfg: StudentConfig, norm: NormStats):
    t_a = 1 if cfg.kind == "cvae" else cfg.horizon
    obs, act, tokens = ds.window_batch(idx, obs_history=cfg.obs_history, action_horizon=t_a)
    obs_n = (obs - norm.obs_mean) / norm.obs_std
    act_n = (act - norm.act_mean) / norm.act_std
    return obs_n, act_n, tokens


def train_policy(dataset: Dataset, cfg: StudentConfig, seed: int, token_vocab: int = 0) -> PolicyBundle:
    """Train a student of the configured kind on the dataset; deterministic in seed."""
    rng = Rng(seed)
    norm = dataset.norm if dataset.norm is not None else dataset.finalize_normalization()
    t_a = 1 if cfg.kind == "cvae" else cfg.horizon
    valid = dataset.valid_window_indices(obs_history=cfg.obs_history, action_horizon=t_a)
    if valid.size == 0:
        raise ValueError("dataset has no valid windows for the configured horizon")
    dcfg = DenoiserConfig(
        obs_dim=dataset.obs_dim, act_dim=dataset.act_dim, obs_history=cfg.obs_history,
        horizon=t_a, model_dim=cfg.model_dim, n_heads=cfg.n_heads, enc_layers=cfg.enc_layers,
        dec_layers=cfg.dec_layers, dropout=cfg.dropout, mlp_ratio=cfg.mlp_ratio, token_vocab=token_vocab,
    )
    schedule = None
    if cfg.kind == "diffusion":
        net = DenoiserNetwork(rng.spawn("init"), dcfg)
        schedule = cosine_schedule(cfg.diffusion_steps, cfg.schedule_shift)
    elif cfg.kind == "mlp":
        net = MlpPolicy(rng.spawn("init"), dcfg, hidden=cfg.mlp_hidden)
    else:
        net = CvaeBaseline(rng.spawn("init"), dcfg, latent_dim=cfg.cvae_latent, beta=cfg.cvae_beta,
                           hidden=cfg.cvae_hidden)
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    train_rng = rng.spawn("train")
    curve = []
    for step in range(cfg.train_steps):
        idx = valid[train_rng.integers(0, valid.size, (cfg.batch_size,))]
        obs_n, act_n, tokens = _normalized_batch(dataset, idx, cfg, norm)
        toks = tokens if token_vocab else None
        lr_scale = min(1.0, (step + 1) / max(1, cfg.warmup))
        if cfg.kind == "diffusion":
            loss = diffusion_train_step(net, obs_n, act_n, toks, schedule, train_rng, opt,
                                        lr_scale=lr_scale, unscaled=cfg.unscaled_forward)
        elif cfg.kind == "mlp":
            loss = mlp_train_step(net, obs_n, act_n, toks, opt, lr_scale=lr_scale)
        else:
            next_obs = dataset.next_obs(idx)
            next_n = (next_obs - norm.obs_mean) / norm.obs_std
            loss, _, _ = cvae_train_step(net, obs_n, next_n, act_n, train_rng, opt, lr_scale=lr_scale)
        if step % 50 == 0 or step == cfg.train_steps - 1:
            curve.append((step, loss))
    return PolicyBundle(
        kind=cfg.kind, config=cfg, denoiser_config=dcfg, net=net, norm=norm, schedule=schedule,
        provenance={"seed": seed, "dataset_hash": dataset.content_hash(), "n_windows": int(valid.size)},
        loss_curve=curve,
    )
