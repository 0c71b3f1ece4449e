"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from .optim import zero_grads
from .tensor import Tensor, backward


def grad_check(f, params: list[tuple[str, Tensor]], h: float = 1e-5) -> float:
    """Max over parameter coordinates of |analytic - central| / max(1, |central|).

    `f` must be a deterministic closure (dropout off) returning a scalar
    Tensor; it is re-evaluated 2 * n_coordinates times for the central
    differences, so keep the parameter count small.
    """
    if h <= 0:
        raise ValueError("grad_check requires h > 0")
    zero_grads(params)
    loss = f()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params}

    worst = 0.0
    for name, p in params:
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            rel = abs(ana[i] - fd) / max(1.0, abs(fd))
            if rel > worst:
                worst = rel
    return worst
