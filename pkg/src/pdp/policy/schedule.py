"""Cosine noise schedule and the forward noising process.

alpha_bar(k) = f(k)/f(0) with f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2);
beta_k = 1 - alpha_bar_k / alpha_bar_{k-1}, clipped to <= 0.999. Sampler
coefficients follow the standard DDPM posterior: mean scale 1/sqrt(alpha_k),
noise-prediction scale beta_k / sqrt(1 - alpha_bar_k), and noise std
sigma_k = sqrt(beta_tilde_k) with beta_tilde_k = beta_k (1 - alpha_bar_{k-1})
/ (1 - alpha_bar_k); the first step adds no noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NoiseSchedule:
    num_steps: int
    betas: np.ndarray  # (K,), betas[i] is beta_{i+1}
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_mean_scale: np.ndarray  # 1/sqrt(alpha_k)
    eps_scale: np.ndarray  # beta_k / sqrt(1 - alpha_bar_k)
    noise_std: np.ndarray  # sqrt(beta_tilde_k), zero at k=1
    # x0-factorization of the same posterior mean:
    # mean = x0_coef * clip(x0_hat) + xk_coef * x_k
    x0_coef: np.ndarray
    xk_coef: np.ndarray
    sqrt_alpha_bars: np.ndarray
    sqrt_one_minus_alpha_bars: np.ndarray
    shift: float = 0.008

    def to_json(self) -> dict:
        return {"num_steps": self.num_steps, "shift": self.shift}


def cosine_schedule(num_steps: int, shift: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if shift <= 0:
        raise ValueError("shift must be > 0")
    k = np.arange(num_steps + 1, dtype=np.float64)
    f = np.cos(((k / num_steps) + shift) / (1.0 + shift) * (np.pi / 2.0)) ** 2
    alpha_bar_raw = f / f[0]
    betas = np.clip(1.0 - alpha_bar_raw[1:] / alpha_bar_raw[:-1], 0.0, max_beta)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    beta_tilde = betas * (1.0 - prev) / (1.0 - alpha_bars)
    return NoiseSchedule(
        num_steps=num_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_mean_scale=1.0 / np.sqrt(alphas),
        eps_scale=betas / np.sqrt(1.0 - alpha_bars),
        noise_std=np.sqrt(beta_tilde),
        x0_coef=np.sqrt(prev) * betas / (1.0 - alpha_bars),
        xk_coef=np.sqrt(alphas) * (1.0 - prev) / (1.0 - alpha_bars),
        sqrt_alpha_bars=np.sqrt(alpha_bars),
        sqrt_one_minus_alpha_bars=np.sqrt(1.0 - alpha_bars),
        shift=shift,
    )


def alpha_bar_closed_form(k: int, num_steps: int, shift: float = 0.008, max_beta: float = 0.999) -> float:
    """Independent scalar evaluation of alpha_bar_k (1-indexed k), math-module only."""

    def f(step: float) -> float:
        return math.cos(((step / num_steps) + shift) / (1.0 + shift) * (math.pi / 2.0)) ** 2

    ab = 1.0
    for i in range(1, k + 1):
        beta = min(max_beta, max(0.0, 1.0 - (f(i) / f(0)) / (f(i - 1) / f(0))))
        ab *= 1.0 - beta
    return ab


def forward_diffuse(a0: np.ndarray, k: int, eps: np.ndarray, schedule: NoiseSchedule,
                    unscaled: bool = False) -> np.ndarray:
    """Noised action window at diffusion step k (1-indexed).

    Standard form: sqrt(alpha_bar_k) * a0 + sqrt(1 - alpha_bar_k) * eps.
    The `unscaled` flag keeps a0 at unit scale (the literal additive form),
    exposed for comparison only.
    """
    if not (1 <= k <= schedule.num_steps):
        raise ValueError(f"diffusion step {k} out of range [1, {schedule.num_steps}]")
    if eps.shape != a0.shape:
        raise ValueError(f"eps shape {eps.shape} != a0 shape {a0.shape}")
    ab = schedule.alpha_bars[k - 1]
    if unscaled:
        return a0 + math.sqrt(1.0 - ab) * eps
    return math.sqrt(ab) * a0 + math.sqrt(1.0 - ab) * eps


def forward_diffuse_batch(a0: np.ndarray, ks: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule,
                          unscaled: bool = False) -> np.ndarray:
    """Per-item diffusion steps: a0 (B, ...), ks (B,) 1-indexed."""
    ab = schedule.alpha_bars[np.asarray(ks) - 1].reshape((-1,) + (1,) * (a0.ndim - 1))
    if unscaled:
        return a0 + np.sqrt(1.0 - ab) * eps
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps
