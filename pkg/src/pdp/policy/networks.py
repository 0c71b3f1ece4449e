"""Noise-prediction transformer and the regression baselines.

The conditioning path mirrors the two block variants: the observation
window is MLP-encoded per step, a FiLM layer (learned element-wise scale
and shift, identity at init) modulates those tokens with the diffusion-step
embedding plus, in the token-conditioned variant, a learned task embedding
standing in for a text encoder. The step embedding is concatenated as an
extra token, the encoder attends over the result, and the decoder
cross-attends from embedded noisy actions to predict the applied noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import Rng, Tensor
from ..numerics import tensor as F
from ..numerics.modules import MLP, Embedding, LayerNorm, Linear, collect_params


@dataclass(frozen=True)
class DenoiserConfig:
    obs_dim: int
    act_dim: int
    obs_history: int = 4
    horizon: int = 1
    model_dim: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    dropout: float = 0.1
    mlp_ratio: int = 4
    token_vocab: int = 0  # 0 = Block A (no task embedding); >0 = Block B

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_json(d: dict) -> "DenoiserConfig":
        return DenoiserConfig(**d)


class _EncoderLayer:
    def __init__(self, rng: Rng, cfg: DenoiserConfig, name: str):
        d = cfg.model_dim
        self.cfg = cfg
        self.ln1 = LayerNorm(d, f"{name}.ln1")
        self.q = Linear(rng.spawn("q"), d, d, f"{name}.q")
        self.k = Linear(rng.spawn("k"), d, d, f"{name}.k")
        self.v = Linear(rng.spawn("v"), d, d, f"{name}.v")
        self.o = Linear(rng.spawn("o"), d, d, f"{name}.o")
        self.ln2 = LayerNorm(d, f"{name}.ln2")
        self.mlp = MLP(rng.spawn("mlp"), [d, cfg.mlp_ratio * d, d], f"{name}.mlp", activation="gelu")

    def __call__(self, x: Tensor, rng: Rng | None, training: bool) -> Tensor:
        h = self.ln1(x)
        att = F.scaled_dot_product_attention(
            self.q(h), self.k(h), self.v(h), n_heads=self.cfg.n_heads,
            dropout_p=self.cfg.dropout, rng=rng, training=training,
        )
        x = F.add(x, self.o(att))
        return F.add(x, self.mlp(self.ln2(x)))

    def params(self):
        return collect_params(self.ln1, self.q, self.k, self.v, self.o, self.ln2, self.mlp)


class _DecoderLayer:
    def __init__(self, rng: Rng, cfg: DenoiserConfig, name: str):
        d = cfg.model_dim
        self.cfg = cfg
        self.ln1 = LayerNorm(d, f"{name}.ln1")
        self.sq = Linear(rng.spawn("sq"), d, d, f"{name}.sq")
        self.sk = Linear(rng.spawn("sk"), d, d, f"{name}.sk")
        self.sv = Linear(rng.spawn("sv"), d, d, f"{name}.sv")
        self.so = Linear(rng.spawn("so"), d, d, f"{name}.so")
        self.ln2 = LayerNorm(d, f"{name}.ln2")
        self.cq = Linear(rng.spawn("cq"), d, d, f"{name}.cq")
        self.ck = Linear(rng.spawn("ck"), d, d, f"{name}.ck")
        self.cv = Linear(rng.spawn("cv"), d, d, f"{name}.cv")
        self.co = Linear(rng.spawn("co"), d, d, f"{name}.co")
        self.ln3 = LayerNorm(d, f"{name}.ln3")
        self.mlp = MLP(rng.spawn("mlp"), [d, cfg.mlp_ratio * d, d], f"{name}.mlp", activation="gelu")

    def __call__(self, x: Tensor, memory: Tensor, rng: Rng | None, training: bool) -> Tensor:
        h = self.ln1(x)
        att = F.scaled_dot_product_attention(
            self.sq(h), self.sk(h), self.sv(h), n_heads=self.cfg.n_heads,
            dropout_p=self.cfg.dropout, rng=rng, training=training,
        )
        x = F.add(x, self.so(att))
        h = self.ln2(x)
        cross = F.scaled_dot_product_attention(
            self.cq(h), self.ck(memory), self.cv(memory), n_heads=self.cfg.n_heads,
            dropout_p=self.cfg.dropout, rng=rng, training=training,
        )
        x = F.add(x, self.co(cross))
        return F.add(x, self.mlp(self.ln3(x)))

    def params(self):
        return collect_params(
            self.ln1, self.sq, self.sk, self.sv, self.so,
            self.ln2, self.cq, self.ck, self.cv, self.co, self.ln3, self.mlp,
        )


def _positions(n: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    ang = np.arange(n)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class DenoiserNetwork:
    """eps_theta(A_k, O, tau, k) -> predicted noise, shape of A_k."""

    def __init__(self, rng: Rng, cfg: DenoiserConfig):
        d = cfg.model_dim
        self.cfg = cfg
        self.obs_mlp = MLP(rng.spawn("obs"), [cfg.obs_dim, d, d], "obs_encoder", activation="gelu")
        self.step_mlp = MLP(rng.spawn("step"), [d, d, d], "step_embed", activation="gelu")
        self.task_embedding = Embedding(rng.spawn("task"), cfg.token_vocab, d, "task_embed") if cfg.token_vocab else None
        # FiLM: identity at init (scale head outputs 1, shift head outputs 0)
        self.film_scale = Linear(rng.spawn("film_s"), d, d, "film.scale", zero_init=True)
        self.film_scale.b.data[...] = 1.0
        self.film_shift = Linear(rng.spawn("film_b"), d, d, "film.shift", zero_init=True)
        self.enc = [_EncoderLayer(rng.spawn(f"enc{i}"), cfg, f"enc{i}") for i in range(cfg.enc_layers)]
        self.enc_ln = LayerNorm(d, "enc_ln")
        self.act_embed = Linear(rng.spawn("act"), cfg.act_dim, d, "act_embed")
        self.dec = [_DecoderLayer(rng.spawn(f"dec{i}"), cfg, f"dec{i}") for i in range(cfg.dec_layers)]
        self.dec_ln = LayerNorm(d, "dec_ln")
        self.head = Linear(rng.spawn("head"), d, cfg.act_dim, "action_head", zero_init=True)
        self.obs_pos = _positions(cfg.obs_history, d)
        self.act_pos = _positions(cfg.horizon, d)

    def params(self) -> list[tuple[str, Tensor]]:
        mods = [self.obs_mlp, self.step_mlp]
        if self.task_embedding is not None:
            mods.append(self.task_embedding)
        mods += [self.film_scale, self.film_shift, *self.enc, self.enc_ln, self.act_embed, *self.dec, self.dec_ln, self.head]
        return collect_params(*mods)

    def forward(
        self,
        obs_window: np.ndarray,  # (B, T_o, obs_dim), normalized
        steps: np.ndarray,  # (B,) diffusion steps, 1-indexed
        noisy_actions: np.ndarray | Tensor,  # (B, T_a, act_dim), normalized
        tokens: np.ndarray | None = None,  # (B,) ints, Block B only
        rng: Rng | None = None,
        training: bool = False,
    ) -> Tensor:
        cfg = self.cfg
        b = obs_window.shape[0]
        if obs_window.shape[1:] != (cfg.obs_history, cfg.obs_dim):
            raise ValueError(f"obs window shape {obs_window.shape} != (B, {cfg.obs_history}, {cfg.obs_dim})")
        step_emb = self.step_mlp(F.sinusoidal_embed(Tensor(np.asarray(steps, dtype=np.float64)), cfg.model_dim))
        cond = step_emb
        if self.task_embedding is not None:
            if tokens is None:
                raise ValueError("token-conditioned denoiser needs token ids")
            cond = F.add(cond, self.task_embedding(np.asarray(tokens)))
        obs_tok = F.add(self.obs_mlp(Tensor(obs_window)), Tensor(self.obs_pos))
        scale = self.film_scale(cond)
        shift = self.film_shift(cond)
        obs_tok = F.add(F.mul(obs_tok, F.reshape(scale, (b, 1, cfg.model_dim))), F.reshape(shift, (b, 1, cfg.model_dim)))
        enc_in = F.concat([F.reshape(step_emb, (b, 1, cfg.model_dim)), obs_tok], axis=1)
        h = enc_in
        for layer in self.enc:
            h = layer(h, rng, training)
        memory = self.enc_ln(h)
        x = noisy_actions if isinstance(noisy_actions, Tensor) else Tensor(noisy_actions)
        if x.shape[1:] != (cfg.horizon, cfg.act_dim):
            raise ValueError(f"action window shape {x.shape} != (B, {cfg.horizon}, {cfg.act_dim})")
        x = F.add(self.act_embed(x), Tensor(self.act_pos))
        for layer in self.dec:
            x = layer(x, memory, rng, training)
        return self.head(self.dec_ln(x))

    def param_values(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params()}


class MlpPolicy:
    """Deterministic regression baseline: flattened window (+ task embedding) -> action sequence."""

    def __init__(self, rng: Rng, cfg: DenoiserConfig, hidden: tuple[int, ...] = (256, 256)):
        self.cfg = cfg
        in_dim = cfg.obs_history * cfg.obs_dim
        self.task_embedding = Embedding(rng.spawn("task"), cfg.token_vocab, 16, "task_embed") if cfg.token_vocab else None
        if self.task_embedding is not None:
            in_dim += 16
        self.net = MLP(rng.spawn("mlp"), [in_dim, *hidden, cfg.horizon * cfg.act_dim], "mlp", activation="relu")

    def params(self):
        mods = ([self.task_embedding] if self.task_embedding else []) + [self.net]
        return collect_params(*mods)

    def forward(self, obs_window: np.ndarray, tokens: np.ndarray | None = None) -> Tensor:
        b = obs_window.shape[0]
        flat = Tensor(obs_window.reshape(b, -1))
        if self.task_embedding is not None:
            flat = F.concat([flat, self.task_embedding(np.asarray(tokens))], axis=1)
        out = self.net(flat)
        return F.reshape(out, (b, self.cfg.horizon, self.cfg.act_dim))

    def param_values(self):
        return {name: p.data.copy() for name, p in self.params()}


class CvaeBaseline:
    """Conditional VAE: encoder(obs window, next obs) -> latent; decoder(z, obs window) -> action."""

    def __init__(self, rng: Rng, cfg: DenoiserConfig, latent_dim: int = 4, beta: float = 1e-3,
                 hidden: tuple[int, ...] = (256, 256)):
        if cfg.horizon != 1:
            raise ValueError("the C-VAE baseline predicts a single action (horizon 1)")
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.beta = beta
        in_obs = cfg.obs_history * cfg.obs_dim
        self.encoder = MLP(rng.spawn("enc"), [in_obs + cfg.obs_dim, *hidden, 2 * latent_dim], "encoder", activation="relu")
        self.decoder = MLP(rng.spawn("dec"), [latent_dim + in_obs, *hidden, cfg.act_dim], "decoder", activation="relu")

    def params(self):
        return collect_params(self.encoder, self.decoder)

    def encode(self, obs_window: np.ndarray, next_obs: np.ndarray) -> tuple[Tensor, Tensor]:
        b = obs_window.shape[0]
        h = self.encoder(Tensor(np.concatenate([obs_window.reshape(b, -1), next_obs], axis=1)))
        return h[:, : self.latent_dim], h[:, self.latent_dim :]

    def decode(self, z: Tensor, obs_window: np.ndarray) -> Tensor:
        b = obs_window.shape[0]
        flat = Tensor(obs_window.reshape(b, -1))
        return self.decoder(F.concat([z, flat], axis=1))

    def param_values(self):
        return {name: p.data.copy() for name, p in self.params()}
