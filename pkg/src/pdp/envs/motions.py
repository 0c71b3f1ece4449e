"""Parametric reference-motion library for the point-mass environments.

Four families (lines, circles, figure-eights, zigzags) sampled
deterministically from a seed. Velocities are stored as forward finite
differences of the positions; analytic velocities are used only to verify
family parametrizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import Rng

FAMILIES = ("line", "circle", "fig8", "zigzag")


@dataclass
class ReferenceMotion:
    positions: np.ndarray  # (N, 2) meters
    velocities: np.ndarray  # (N, 2) m/s, forward finite differences
    dt: float
    label: str  # "<family>-<index>"
    family: str
    index: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class MotionLibraryConfig:
    families: tuple[str, ...] = FAMILIES
    count_per_family: int = 8
    duration: float = 4.0
    dt: float = 0.02
    seed: int = 0
    test_every: int = 4  # index k with k % test_every == test_every-1 goes to the test split


def _fd_velocities(pos: np.ndarray, dt: float) -> np.ndarray:
    vel = np.empty_like(pos)
    vel[:-1] = (pos[1:] - pos[:-1]) / dt
    vel[-1] = vel[-2]
    return vel


def _line(rng: Rng, times: np.ndarray) -> tuple[np.ndarray, dict]:
    heading = rng.uniform() * 2 * np.pi
    speed = 0.3 + 0.5 * rng.uniform()
    d = np.array([np.cos(heading), np.sin(heading)])
    start = -0.5 * speed * times[-1] * d
    pos = start[None, :] + speed * times[:, None] * d[None, :]
    return pos, {"heading": heading, "speed": speed}


def _circle(rng: Rng, times: np.ndarray) -> tuple[np.ndarray, dict]:
    radius = 0.5 + 1.0 * rng.uniform()
    speed = 0.3 + 0.5 * rng.uniform()
    rate = speed / radius * (1.0 if rng.uniform() < 0.5 else -1.0)
    phase = rng.uniform() * 2 * np.pi
    ang = phase + rate * times
    pos = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return pos, {"radius": radius, "rate": rate, "phase": phase}


def circle_analytic_velocity(meta: dict, times: np.ndarray) -> np.ndarray:
    ang = meta["phase"] + meta["rate"] * times
    return meta["radius"] * meta["rate"] * np.stack([-np.sin(ang), np.cos(ang)], axis=1)


def _fig8(rng: Rng, times: np.ndarray) -> tuple[np.ndarray, dict]:
    amp = 0.6 + 0.8 * rng.uniform()
    rate = (0.4 + 0.4 * rng.uniform()) * 2 * np.pi / times[-1]
    phase = rng.uniform() * 2 * np.pi
    pos = amp * np.stack([np.sin(rate * times + phase), 0.5 * np.sin(2 * (rate * times + phase))], axis=1)
    return pos, {"amp": amp, "rate": rate, "phase": phase}


def _zigzag(rng: Rng, times: np.ndarray) -> tuple[np.ndarray, dict]:
    speed = 0.3 + 0.5 * rng.uniform()
    base = rng.uniform() * 2 * np.pi
    half_angle = 0.5 + 0.4 * rng.uniform()
    period = 0.8 + 0.6 * rng.uniform()
    seg = np.floor(times / period).astype(int)
    heading = base + half_angle * np.where(seg % 2 == 0, 1.0, -1.0)
    steps = np.diff(times, prepend=0.0)
    dxy = speed * steps[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    pos = np.cumsum(dxy, axis=0)
    pos -= pos.mean(axis=0, keepdims=True)
    return pos, {"speed": speed, "base": base, "half_angle": half_angle, "period": period}


_GENERATORS = {"line": _line, "circle": _circle, "fig8": _fig8, "zigzag": _zigzag}


def motion_library(config: MotionLibraryConfig) -> list[ReferenceMotion]:
    """All motions, ordered (family, index); deterministic in config.seed."""
    for fam in config.families:
        if fam not in _GENERATORS:
            raise ValueError(f"unknown motion family {fam!r}; known: {sorted(_GENERATORS)}")
    n_steps = int(round(config.duration / config.dt))
    times = np.arange(n_steps + 1) * config.dt
    root = Rng(config.seed).spawn("motions")
    motions = []
    for fam in config.families:
        for idx in range(config.count_per_family):
            rng = root.spawn(fam).spawn(idx)
            pos, meta = _GENERATORS[fam](rng, times)
            motions.append(
                ReferenceMotion(
                    positions=pos,
                    velocities=_fd_velocities(pos, config.dt),
                    dt=config.dt,
                    label=f"{fam}-{idx}",
                    family=fam,
                    index=idx,
                    meta=meta,
                )
            )
    return motions


def split_library(motions: list[ReferenceMotion], test_every: int = 4) -> tuple[list[ReferenceMotion], list[ReferenceMotion]]:
    """Disjoint train/test splits keyed on the per-family index."""
    train = [m for m in motions if m.index % test_every != test_every - 1]
    test = [m for m in motions if m.index % test_every == test_every - 1]
    return train, test
