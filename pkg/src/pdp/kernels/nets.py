"""Tape-free denoiser forward and DDPM sampling loop, in two backends.

The math mirrors pdp.policy.networks.DenoiserNetwork.forward exactly
(equivalence is pinned by tests); weights are packed into stacked arrays so
the whole reverse-diffusion loop can run inside one compiled call. The
numpy twin keeps identical semantics for the PDP_NUMBA=0 fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import NUMBA_ACTIVE

if NUMBA_ACTIVE:  # pragma: no cover - exercised via the dispatch wrappers
    from numba import njit
else:

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco if not (args and callable(args[0])) else args[0]


@dataclass(frozen=True)
class DenoiserWeights:
    cond: tuple  # obs/step/action embeddings, task table, FiLM, positions, freqs
    enc: tuple  # stacked encoder layer weights
    dec: tuple  # stacked decoder layer weights
    head: tuple  # final layer norms and action head
    n_heads: int
    has_task: bool
    obs_history: int
    horizon: int
    act_dim: int


def pack_denoiser(net) -> DenoiserWeights:
    """Stack a DenoiserNetwork's parameters for the kernels."""
    cfg = net.cfg
    d = cfg.model_dim

    def w(lin):
        return np.ascontiguousarray(lin.w.data)

    def b(lin):
        return np.ascontiguousarray(lin.b.data)

    task = np.ascontiguousarray(net.task_embedding.table.data) if net.task_embedding else np.zeros((1, d))
    half = d // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    cond = (
        w(net.obs_mlp.layers[0]), b(net.obs_mlp.layers[0]), w(net.obs_mlp.layers[1]), b(net.obs_mlp.layers[1]),
        w(net.step_mlp.layers[0]), b(net.step_mlp.layers[0]), w(net.step_mlp.layers[1]), b(net.step_mlp.layers[1]),
        task, w(net.film_scale), b(net.film_scale), w(net.film_shift), b(net.film_shift),
        w(net.act_embed), b(net.act_embed),
        np.ascontiguousarray(net.obs_pos), np.ascontiguousarray(net.act_pos), freqs,
    )

    def stack(layers, get):
        return np.ascontiguousarray(np.stack([get(l) for l in layers]))

    enc = (
        stack(net.enc, lambda l: l.ln1.gamma.data), stack(net.enc, lambda l: l.ln1.beta.data),
        stack(net.enc, lambda l: l.q.w.data), stack(net.enc, lambda l: l.q.b.data),
        stack(net.enc, lambda l: l.k.w.data), stack(net.enc, lambda l: l.k.b.data),
        stack(net.enc, lambda l: l.v.w.data), stack(net.enc, lambda l: l.v.b.data),
        stack(net.enc, lambda l: l.o.w.data), stack(net.enc, lambda l: l.o.b.data),
        stack(net.enc, lambda l: l.ln2.gamma.data), stack(net.enc, lambda l: l.ln2.beta.data),
        stack(net.enc, lambda l: l.mlp.layers[0].w.data), stack(net.enc, lambda l: l.mlp.layers[0].b.data),
        stack(net.enc, lambda l: l.mlp.layers[1].w.data), stack(net.enc, lambda l: l.mlp.layers[1].b.data),
    )
    dec = (
        stack(net.dec, lambda l: l.ln1.gamma.data), stack(net.dec, lambda l: l.ln1.beta.data),
        stack(net.dec, lambda l: l.sq.w.data), stack(net.dec, lambda l: l.sq.b.data),
        stack(net.dec, lambda l: l.sk.w.data), stack(net.dec, lambda l: l.sk.b.data),
        stack(net.dec, lambda l: l.sv.w.data), stack(net.dec, lambda l: l.sv.b.data),
        stack(net.dec, lambda l: l.so.w.data), stack(net.dec, lambda l: l.so.b.data),
        stack(net.dec, lambda l: l.ln2.gamma.data), stack(net.dec, lambda l: l.ln2.beta.data),
        stack(net.dec, lambda l: l.cq.w.data), stack(net.dec, lambda l: l.cq.b.data),
        stack(net.dec, lambda l: l.ck.w.data), stack(net.dec, lambda l: l.ck.b.data),
        stack(net.dec, lambda l: l.cv.w.data), stack(net.dec, lambda l: l.cv.b.data),
        stack(net.dec, lambda l: l.co.w.data), stack(net.dec, lambda l: l.co.b.data),
        stack(net.dec, lambda l: l.ln3.gamma.data), stack(net.dec, lambda l: l.ln3.beta.data),
        stack(net.dec, lambda l: l.mlp.layers[0].w.data), stack(net.dec, lambda l: l.mlp.layers[0].b.data),
        stack(net.dec, lambda l: l.mlp.layers[1].w.data), stack(net.dec, lambda l: l.mlp.layers[1].b.data),
    )
    head = (
        np.ascontiguousarray(net.enc_ln.gamma.data), np.ascontiguousarray(net.enc_ln.beta.data),
        np.ascontiguousarray(net.dec_ln.gamma.data), np.ascontiguousarray(net.dec_ln.beta.data),
        w(net.head), b(net.head),
    )
    return DenoiserWeights(
        cond=cond, enc=enc, dec=dec, head=head, n_heads=cfg.n_heads,
        has_task=net.task_embedding is not None, obs_history=cfg.obs_history,
        horizon=cfg.horizon, act_dim=cfg.act_dim,
    )


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


@njit(cache=True)
def _ln_rows(x, g, b):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            dv = x[i, j] - mu
            var += dv * dv
        var /= d
        inv = 1.0 / math.sqrt(var + 1e-5)
        for j in range(d):
            out[i, j] = (x[i, j] - mu) * inv * g[j] + b[j]
    return out


@njit(cache=True)
def _gelu_rows(x):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            u = _GELU_C * (v + 0.044715 * v * v * v)
            out[i, j] = 0.5 * v * (1.0 + math.tanh(u))
    return out


@njit(cache=True)
def _linear(x, w, bias):
    out = np.dot(x, w)
    n, d = out.shape
    for i in range(n):
        for j in range(d):
            out[i, j] += bias[j]
    return out


@njit(cache=True)
def _attention(q, k, v, n_heads):
    """q (B, T, d), k/v (B, S, d) -> (B, T, d); per-(batch, head) loops."""
    bsz, t_len, d = q.shape
    s_len = k.shape[1]
    dh = d // n_heads
    scale = 1.0 / math.sqrt(dh)
    out = np.zeros((bsz, t_len, d))
    scores = np.empty((t_len, s_len))
    for bi in range(bsz):
        for h in range(n_heads):
            o = h * dh
            for i in range(t_len):
                for j in range(s_len):
                    acc = 0.0
                    for c in range(dh):
                        acc += q[bi, i, o + c] * k[bi, j, o + c]
                    scores[i, j] = acc * scale
            for i in range(t_len):
                mx = scores[i, 0]
                for j in range(1, s_len):
                    if scores[i, j] > mx:
                        mx = scores[i, j]
                ssum = 0.0
                for j in range(s_len):
                    e = math.exp(scores[i, j] - mx)
                    scores[i, j] = e
                    ssum += e
                for j in range(s_len):
                    scores[i, j] /= ssum
                for j in range(s_len):
                    wij = scores[i, j]
                    for c in range(dh):
                        out[bi, i, o + c] += wij * v[bi, j, o + c]
    return out


@njit(cache=True)
def _encode_nb(cond, enc, head, n_heads, has_task, obs, steps, tokens):
    """Condition path + encoder stack -> (memory (B, T_o+1, d), step count reuse)."""
    (ow1, ob1, ow2, ob2, sw1, sb1, sw2, sb2, task, fsw, fsb, fhw, fhb,
     aw, ab, obs_pos, act_pos, freqs) = cond
    (e_g1, e_b1, e_wq, e_bq, e_wk, e_bk, e_wv, e_bv, e_wo, e_bo,
     e_g2, e_b2, e_m1, e_c1, e_m2, e_c2) = enc
    (elng, elnb, dlng, dlnb, hw, hb) = head
    bsz, t_o, od = obs.shape
    d = ow1.shape[1]
    half = d // 2

    se = np.empty((bsz, d))
    for bi in range(bsz):
        t = float(steps[bi])
        for j in range(half):
            a = t * freqs[j]
            se[bi, j] = math.sin(a)
            se[bi, half + j] = math.cos(a)
    step_emb = _linear(_gelu_rows(_linear(se, sw1, sb1)), sw2, sb2)

    cond_vec = step_emb.copy()
    if has_task:
        for bi in range(bsz):
            tk = tokens[bi]
            for j in range(d):
                cond_vec[bi, j] += task[tk, j]

    obs_flat = np.ascontiguousarray(obs).reshape(bsz * t_o, od)
    emb = _linear(_gelu_rows(_linear(obs_flat, ow1, ob1)), ow2, ob2)
    scale = _linear(cond_vec, fsw, fsb)
    shift = _linear(cond_vec, fhw, fhb)
    s_tok = t_o + 1
    h = np.empty((bsz * s_tok, d))
    for bi in range(bsz):
        base = bi * s_tok
        for j in range(d):
            h[base, j] = step_emb[bi, j]
        for t in range(t_o):
            for j in range(d):
                h[base + 1 + t, j] = (emb[bi * t_o + t, j] + obs_pos[t, j]) * scale[bi, j] + shift[bi, j]

    n_enc = e_g1.shape[0]
    for l in range(n_enc):
        hn = _ln_rows(h, e_g1[l], e_b1[l])
        q = _linear(hn, e_wq[l], e_bq[l]).reshape(bsz, s_tok, d)
        k = _linear(hn, e_wk[l], e_bk[l]).reshape(bsz, s_tok, d)
        v = _linear(hn, e_wv[l], e_bv[l]).reshape(bsz, s_tok, d)
        att = np.ascontiguousarray(_attention(q, k, v, n_heads)).reshape(bsz * s_tok, d)
        h = h + _linear(att, e_wo[l], e_bo[l])
        h2 = _ln_rows(h, e_g2[l], e_b2[l])
        h = h + _linear(_gelu_rows(_linear(h2, e_m1[l], e_c1[l])), e_m2[l], e_c2[l])
    memory = _ln_rows(h, elng, elnb).reshape(bsz, s_tok, d)
    return memory


@njit(cache=True)
def _decode_nb(cond, dec, head, n_heads, memory, x_in):
    """Decoder stack on embedded noisy actions -> predicted noise (B, T_a, ad)."""
    (ow1, ob1, ow2, ob2, sw1, sb1, sw2, sb2, task, fsw, fsb, fhw, fhb,
     aw, ab, obs_pos, act_pos, freqs) = cond
    (d_g1, d_b1, d_sqw, d_sqb, d_skw, d_skb, d_svw, d_svb, d_sow, d_sob,
     d_g2, d_b2, d_cqw, d_cqb, d_ckw, d_ckb, d_cvw, d_cvb, d_cow, d_cob,
     d_g3, d_b3, d_m1, d_c1, d_m2, d_c2) = dec
    (elng, elnb, dlng, dlnb, hw, hb) = head
    bsz, t_a, ad = x_in.shape
    d = aw.shape[1]
    s_tok = memory.shape[1]

    x_flat = np.ascontiguousarray(x_in).reshape(bsz * t_a, ad)
    h = _linear(x_flat, aw, ab)
    for bi in range(bsz):
        for t in range(t_a):
            for j in range(d):
                h[bi * t_a + t, j] += act_pos[t, j]

    mem_flat = np.ascontiguousarray(memory).reshape(bsz * s_tok, d)
    n_dec = d_g1.shape[0]
    for l in range(n_dec):
        hn = _ln_rows(h, d_g1[l], d_b1[l])
        q = _linear(hn, d_sqw[l], d_sqb[l]).reshape(bsz, t_a, d)
        k = _linear(hn, d_skw[l], d_skb[l]).reshape(bsz, t_a, d)
        v = _linear(hn, d_svw[l], d_svb[l]).reshape(bsz, t_a, d)
        att = np.ascontiguousarray(_attention(q, k, v, n_heads)).reshape(bsz * t_a, d)
        h = h + _linear(att, d_sow[l], d_sob[l])
        hn = _ln_rows(h, d_g2[l], d_b2[l])
        q = _linear(hn, d_cqw[l], d_cqb[l]).reshape(bsz, t_a, d)
        k = _linear(mem_flat, d_ckw[l], d_ckb[l]).reshape(bsz, s_tok, d)
        v = _linear(mem_flat, d_cvw[l], d_cvb[l]).reshape(bsz, s_tok, d)
        att = np.ascontiguousarray(_attention(q, k, v, n_heads)).reshape(bsz * t_a, d)
        h = h + _linear(att, d_cow[l], d_cob[l])
        h2 = _ln_rows(h, d_g3[l], d_b3[l])
        h = h + _linear(_gelu_rows(_linear(h2, d_m1[l], d_c1[l])), d_m2[l], d_c2[l])
    out = _linear(_ln_rows(h, dlng, dlnb), hw, hb)
    return np.ascontiguousarray(out).reshape(bsz, t_a, ad)


@njit(cache=True)
def _forward_nb(cond, enc, dec, head, n_heads, has_task, obs, steps, x_in, tokens):
    memory = _encode_nb(cond, enc, head, n_heads, has_task, obs, steps, tokens)
    return _decode_nb(cond, dec, head, n_heads, memory, x_in)


@njit(cache=True)
def _sample_nb(cond, enc, dec, head, n_heads, has_task, obs, tokens,
               noise_std, delta_s, x0_coef, xk_coef, sqrt_ab, sqrt_omab,
               unscaled, clip_x0, noise):
    k_steps, bsz, t_a, ad = noise.shape
    x = noise[0].copy()
    steps = np.empty(bsz, dtype=np.int64)
    for idx in range(k_steps):
        k = k_steps - idx
        for bi in range(bsz):
            steps[bi] = k
        eps_hat = _forward_nb(cond, enc, dec, head, n_heads, has_task, obs, steps, x, tokens)
        if unscaled:
            for bi in range(bsz):
                for t in range(t_a):
                    for j in range(ad):
                        x[bi, t, j] = x[bi, t, j] - delta_s[k - 1] * eps_hat[bi, t, j]
        else:
            for bi in range(bsz):
                for t in range(t_a):
                    for j in range(ad):
                        x0 = (x[bi, t, j] - sqrt_omab[k - 1] * eps_hat[bi, t, j]) / sqrt_ab[k - 1]
                        if x0 > clip_x0:
                            x0 = clip_x0
                        elif x0 < -clip_x0:
                            x0 = -clip_x0
                        x[bi, t, j] = x0_coef[k - 1] * x0 + xk_coef[k - 1] * x[bi, t, j]
        if k > 1:
            z = noise[idx + 1]
            for bi in range(bsz):
                for t in range(t_a):
                    for j in range(ad):
                        x[bi, t, j] += noise_std[k - 1] * z[bi, t, j]
    return x


# ---------------------------------------------------------------------------
# numpy backend (vectorized twin)
# ---------------------------------------------------------------------------


def _gelu_np(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _ln_np(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * g + b


def _attention_np(q, k, v, n_heads):
    bsz, t_len, d = q.shape
    s_len = k.shape[1]
    dh = d // n_heads
    qh = q.reshape(bsz, t_len, n_heads, dh).transpose(0, 2, 1, 3)
    kh = k.reshape(bsz, s_len, n_heads, dh).transpose(0, 2, 3, 1)
    vh = v.reshape(bsz, s_len, n_heads, dh).transpose(0, 2, 1, 3)
    scores = (qh @ kh) / math.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=-1, keepdims=True)
    out = probs @ vh
    return out.transpose(0, 2, 1, 3).reshape(bsz, t_len, d)


def _forward_np(cond, enc, dec, head, n_heads, has_task, obs, steps, x_in, tokens):
    (ow1, ob1, ow2, ob2, sw1, sb1, sw2, sb2, task, fsw, fsb, fhw, fhb,
     aw, ab, obs_pos, act_pos, freqs) = cond
    (e_g1, e_b1, e_wq, e_bq, e_wk, e_bk, e_wv, e_bv, e_wo, e_bo,
     e_g2, e_b2, e_m1, e_c1, e_m2, e_c2) = enc
    (d_g1, d_b1, d_sqw, d_sqb, d_skw, d_skb, d_svw, d_svb, d_sow, d_sob,
     d_g2, d_b2, d_cqw, d_cqb, d_ckw, d_ckb, d_cvw, d_cvb, d_cow, d_cob,
     d_g3, d_b3, d_m1, d_c1, d_m2, d_c2) = dec
    (elng, elnb, dlng, dlnb, hw, hb) = head
    bsz, t_o, od = obs.shape
    t_a, ad = x_in.shape[1], x_in.shape[2]
    d = ow1.shape[1]

    ang = np.asarray(steps, dtype=np.float64)[:, None] * freqs[None, :]
    se = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
    step_emb = _gelu_np(se @ sw1 + sb1) @ sw2 + sb2
    cond_vec = step_emb + (task[tokens] if has_task else 0.0)
    emb = _gelu_np(obs @ ow1 + ob1) @ ow2 + ob2
    scale = cond_vec @ fsw + fsb
    shift = cond_vec @ fhw + fhb
    obs_tok = (emb + obs_pos) * scale[:, None, :] + shift[:, None, :]
    h = np.concatenate([step_emb[:, None, :], obs_tok], axis=1)
    for l in range(e_g1.shape[0]):
        hn = _ln_np(h, e_g1[l], e_b1[l])
        att = _attention_np(hn @ e_wq[l] + e_bq[l], hn @ e_wk[l] + e_bk[l], hn @ e_wv[l] + e_bv[l], n_heads)
        h = h + att @ e_wo[l] + e_bo[l]
        h2 = _ln_np(h, e_g2[l], e_b2[l])
        h = h + _gelu_np(h2 @ e_m1[l] + e_c1[l]) @ e_m2[l] + e_c2[l]
    memory = _ln_np(h, elng, elnb)

    x = x_in @ aw + ab + act_pos
    for l in range(d_g1.shape[0]):
        hn = _ln_np(x, d_g1[l], d_b1[l])
        att = _attention_np(hn @ d_sqw[l] + d_sqb[l], hn @ d_skw[l] + d_skb[l], hn @ d_svw[l] + d_svb[l], n_heads)
        x = x + att @ d_sow[l] + d_sob[l]
        hn = _ln_np(x, d_g2[l], d_b2[l])
        att = _attention_np(hn @ d_cqw[l] + d_cqb[l], memory @ d_ckw[l] + d_ckb[l], memory @ d_cvw[l] + d_cvb[l], n_heads)
        x = x + att @ d_cow[l] + d_cob[l]
        h2 = _ln_np(x, d_g3[l], d_b3[l])
        x = x + _gelu_np(h2 @ d_m1[l] + d_c1[l]) @ d_m2[l] + d_c2[l]
    return _ln_np(x, dlng, dlnb) @ hw + hb


def _sample_np(cond, enc, dec, head, n_heads, has_task, obs, tokens,
               noise_std, delta_s, x0_coef, xk_coef, sqrt_ab, sqrt_omab,
               unscaled, clip_x0, noise):
    k_steps, bsz = noise.shape[0], noise.shape[1]
    x = noise[0].copy()
    for idx in range(k_steps):
        k = k_steps - idx
        steps = np.full(bsz, k, dtype=np.int64)
        eps_hat = _forward_np(cond, enc, dec, head, n_heads, has_task, obs, steps, x, tokens)
        if unscaled:
            x = x - delta_s[k - 1] * eps_hat
        else:
            x0 = np.clip((x - sqrt_omab[k - 1] * eps_hat) / sqrt_ab[k - 1], -clip_x0, clip_x0)
            x = x0_coef[k - 1] * x0 + xk_coef[k - 1] * x
        if k > 1:
            x = x + noise_std[k - 1] * noise[idx + 1]
    return x


# ---------------------------------------------------------------------------
# dispatch wrappers
# ---------------------------------------------------------------------------


def _prep_tokens(weights: DenoiserWeights, tokens, bsz: int) -> np.ndarray:
    if tokens is None:
        if weights.has_task:
            raise ValueError("token-conditioned denoiser needs token ids")
        return np.zeros(bsz, dtype=np.int64)
    return np.asarray(tokens, dtype=np.int64)


def denoiser_forward_batch(weights: DenoiserWeights, obs: np.ndarray, steps: np.ndarray,
                           x: np.ndarray, tokens: np.ndarray | None = None) -> np.ndarray:
    """Predicted noise for normalized inputs; backend per PDP_NUMBA."""
    toks = _prep_tokens(weights, tokens, obs.shape[0])
    fn = _forward_nb if NUMBA_ACTIVE else _forward_np
    return fn(weights.cond, weights.enc, weights.dec, weights.head, weights.n_heads,
              weights.has_task, np.ascontiguousarray(obs),
              np.asarray(steps, dtype=np.int64), np.ascontiguousarray(x), toks)


def _delta_s(schedule) -> np.ndarray:
    ab = schedule.alpha_bars
    prev = np.concatenate([[1.0], ab[:-1]])
    return np.sqrt(1.0 - ab) - np.sqrt(1.0 - prev)


def ddpm_sample_batch(weights: DenoiserWeights, obs: np.ndarray, tokens: np.ndarray | None,
                      schedule, noise: np.ndarray, unscaled: bool = False,
                      clip_x0: float = 3.0) -> np.ndarray:
    """Full reverse chain; `noise` is (K, B, T_a, act_dim): start plus per-step draws."""
    k_steps = schedule.num_steps
    if noise.shape != (k_steps, obs.shape[0], weights.horizon, weights.act_dim):
        raise ValueError(f"noise shape {noise.shape} != {(k_steps, obs.shape[0], weights.horizon, weights.act_dim)}")
    toks = _prep_tokens(weights, tokens, obs.shape[0])
    fn = _sample_nb if NUMBA_ACTIVE else _sample_np
    return fn(weights.cond, weights.enc, weights.dec, weights.head, weights.n_heads,
              weights.has_task, np.ascontiguousarray(obs), toks,
              schedule.noise_std, _delta_s(schedule),
              schedule.x0_coef, schedule.xk_coef, schedule.sqrt_alpha_bars,
              schedule.sqrt_one_minus_alpha_bars, unscaled, float(clip_x0),
              np.ascontiguousarray(noise))
