"""Hot inference kernels: numba-compiled with a pure-numpy fallback.

The DDPM sampler dominates evaluation runtime (K denoiser forwards per
control step, hundreds of steps, hundreds of episodes), so the denoiser
forward and the full reverse-diffusion loop have two interchangeable
implementations:

  * a numba @njit path (default when numba imports cleanly), and
  * a vectorized numpy path with identical semantics.

Set PDP_NUMBA=0 to force the numpy path. `active_backend()` reports which
one is live; benchmarks/kernel_bench.py compares them.
"""

from __future__ import annotations

import os

NUMBA_REQUESTED = os.environ.get("PDP_NUMBA", "1") != "0"

try:  # pragma: no cover - import guard
    if NUMBA_REQUESTED:
        from numba import njit  # noqa: F401

        NUMBA_AVAILABLE = True
    else:
        NUMBA_AVAILABLE = False
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

NUMBA_ACTIVE = NUMBA_REQUESTED and NUMBA_AVAILABLE


def active_backend() -> str:
    return "numba" if NUMBA_ACTIVE else "numpy"


from .nets import (  # noqa: E402
    DenoiserWeights,
    ddpm_sample_batch,
    denoiser_forward_batch,
    pack_denoiser,
)

__all__ = [
    "DenoiserWeights",
    "NUMBA_ACTIVE",
    "active_backend",
    "ddpm_sample_batch",
    "denoiser_forward_batch",
    "pack_denoiser",
]
