"""Counter-based random number generation.

Every stream is a (key, counter) pair fed through the splitmix64 finalizer,
so identical seeds and call sequences give bit-identical outputs on any
platform, streams can be forked without coordination, and batched rollouts
can draw per-episode noise that does not depend on batch composition.
Gaussians come from Box-Muller, which only needs the uniform stream.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)

_U64 = np.uint64
_TWO_NEG53 = 2.0 ** -53


def mix64(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """splitmix64 finalizer; accepts uint64 scalars or arrays (wraparound intended)."""
    with np.errstate(over="ignore"):
        z = (x + _GOLDEN).astype(np.uint64) if isinstance(x, np.ndarray) else _U64(x + _GOLDEN)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _fnv1a(data: bytes) -> np.uint64:
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in data:
            h = (h ^ _U64(b)) * _FNV_PRIME
    return h


def _tag_to_u64(tag) -> np.uint64:
    if isinstance(tag, (int, np.integer)):
        return _U64(int(tag) & 0xFFFFFFFFFFFFFFFF)
    if isinstance(tag, str):
        return _fnv1a(tag.encode("utf-8"))
    raise TypeError(f"rng tag must be int or str, got {type(tag).__name__}")


def _bits_to_unit(bits: np.ndarray) -> np.ndarray:
    # top 53 bits -> float64 in [0, 1)
    return (bits >> _U64(11)).astype(np.float64) * _TWO_NEG53


def _box_muller(u1: np.ndarray, u2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 in (0,1], so log is finite
    ang = (2.0 * np.pi) * u2
    return r * np.cos(ang), r * np.sin(ang)


class Rng:
    """Seeded, forkable, counter-based random stream."""

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, _key: np.uint64 | None = None):
        self.key = mix64(_U64(int(seed) & 0xFFFFFFFFFFFFFFFF)) if _key is None else _key
        self.counter = 0

    def spawn(self, tag) -> "Rng":
        """Independent child stream; deterministic function of (key, tag) only."""
        child = Rng(0, _key=mix64(self.key ^ mix64(_tag_to_u64(tag))))
        return child

    def _draw_bits(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64(self.key + idx * _GOLDEN)

    def uniform(self, shape=()) -> np.ndarray | float:
        n = int(np.prod(shape)) if shape else 1
        u = _bits_to_unit(self._draw_bits(n))
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()) -> np.ndarray | float:
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = _bits_to_unit(self._draw_bits(2 * m))
        z0, z1 = _box_muller(u[0::2], u[1::2])
        z = np.empty(2 * m)
        z[0::2] = z0
        z[1::2] = z1
        return z[:n].reshape(shape) if shape else float(z[0])

    def integers(self, low: int, high: int, shape=()) -> np.ndarray | int:
        """Uniform ints in [low, high); modulo draw (bias < 2**-40 for our ranges)."""
        if high <= low:
            raise ValueError(f"integers: empty range [{low}, {high})")
        n = int(np.prod(shape)) if shape else 1
        span = _U64(high - low)
        v = (self._draw_bits(n) % span).astype(np.int64) + low
        return v.reshape(shape) if shape else int(v[0])

    def choice(self, options, shape=()):
        idx = self.integers(0, len(options), shape)
        arr = np.asarray(options)
        return arr[idx]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates with stream draws; deterministic."""
        perm = np.arange(n)
        swaps = np.asarray([self.integers(0, n - i) for i in range(n - 1)])
        for i in range(n - 1):
            j = i + swaps[i]
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def keyed_bits(keys: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Counter bits for a batch of stream keys: shape (len(keys), n).

    Row b reproduces what Rng(_key=keys[b]) would draw at counters
    offset..offset+n-1, independent of the other rows.
    """
    with np.errstate(over="ignore"):
        idx = np.arange(offset, offset + n, dtype=np.uint64) * _GOLDEN
        return mix64(keys[:, None] + idx[None, :])


def keyed_normal(keys: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Batched Box-Muller draws, (len(keys), n); consumes 2*ceil(n/2) counters."""
    m = (n + 1) // 2
    u = _bits_to_unit(keyed_bits(keys, 2 * m, offset))
    z0, z1 = _box_muller(u[:, 0::2], u[:, 1::2])
    z = np.empty((keys.shape[0], 2 * m))
    z[:, 0::2] = z0
    z[:, 1::2] = z1
    return z[:, :n]


def spawn_keys(rng: Rng, tags: np.ndarray) -> np.ndarray:
    """Vectorized rng.spawn(tag).key for integer tags."""
    return mix64(rng.key ^ mix64(tags.astype(np.uint64)))
