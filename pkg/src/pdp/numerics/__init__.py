"""Tensor arithmetic, reverse-mode autodiff, AdamW, and seeded RNG."""

from .gradcheck import grad_check
from .optim import AdamWState, adamw_step, zero_grads
from .rng import Rng, keyed_normal, mix64, spawn_keys
from .tensor import (
    NonScalarLossError,
    OpShapeError,
    Tensor,
    backward,
    forward_op,
    no_grad,
)

__all__ = [
    "AdamWState",
    "NonScalarLossError",
    "OpShapeError",
    "Rng",
    "Tensor",
    "adamw_step",
    "backward",
    "forward_op",
    "grad_check",
    "keyed_normal",
    "mix64",
    "no_grad",
    "spawn_keys",
    "zero_grads",
]
