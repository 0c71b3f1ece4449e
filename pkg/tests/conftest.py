"""Shared fixtures: small trained experts reused across test modules."""

import numpy as np
import pytest

from pdp.envs import MotionLibraryConfig, PendulumConfig, Perturbation, PointMassConfig, motion_library, split_library
from pdp.expert import PpoConfig, train_pendulum_expert, train_tracking_expert


@pytest.fixture(scope="session")
def pend_cfg():
    return PendulumConfig()


@pytest.fixture(scope="session")
def high_cell(pend_cfg):
    return Perturbation(onset_time=pend_cfg.id_onset_time, magnitude=pend_cfg.id_magnitudes[1], direction=1,
                        duration=pend_cfg.kick_steps)


@pytest.fixture(scope="session")
def pendulum_expert(pend_cfg, high_cell):
    policy, _ = train_pendulum_expert(pend_cfg, high_cell, PpoConfig(iterations=400), seed=13)
    return policy


@pytest.fixture(scope="session")
def pm_cfg():
    return PointMassConfig()


@pytest.fixture(scope="session")
def motion_split():
    lib = motion_library(MotionLibraryConfig(seed=0))
    return split_library(lib)


@pytest.fixture(scope="session")
def line_refs(motion_split):
    train, test = motion_split
    return [m for m in train if m.family == "line"], [m for m in test if m.family == "line"]


@pytest.fixture(scope="session")
def line_expert(pm_cfg, line_refs):
    train, test = line_refs
    policy, _ = train_tracking_expert(pm_cfg, train, PpoConfig(iterations=300), seed=3, eval_refs=test)
    return policy
