"""Shared environment types."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motions import ReferenceMotion

TASK_KINDS = ("track", "perturb_recover", "token_generate")


@dataclass
class EnvState:
    q: np.ndarray  # generalized positions (pendulum: [theta]; point-mass: [x, y])
    v: np.ndarray  # generalized velocities
    dt: float = 0.02
    step_count: int = 0
    perturb_active: bool = False
    perturb_remaining: int = 0
    phase_index: int = 0

    @property
    def t(self) -> float:
        return self.step_count * self.dt

    def copy(self) -> "EnvState":
        return EnvState(
            q=self.q.copy(),
            v=self.v.copy(),
            dt=self.dt,
            step_count=self.step_count,
            perturb_active=self.perturb_active,
            perturb_remaining=self.perturb_remaining,
            phase_index=self.phase_index,
        )


@dataclass(frozen=True)
class Perturbation:
    onset_time: float  # seconds
    magnitude: float  # fraction of the configured kick scale
    direction: int  # +1 or -1
    duration: int  # steps


@dataclass(frozen=True)
class TaskSpec:
    kind: str  # one of TASK_KINDS
    token: int = -1  # token_generate only
    reference: ReferenceMotion | None = None  # track only

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; known: {TASK_KINDS}")


class OffsetBoundsError(ValueError):
    pass


class NonFiniteActionError(ValueError):
    pass
