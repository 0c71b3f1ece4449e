"""Behavior-cloning dataset: episode-structured transitions with windowing.

Transitions store the observation, the stored (training-target) action and
the executed action, both in env units. Windows pair an observation history
ending at t with an action sequence starting at t and never cross episode
boundaries; the first T_o-1 steps pad by repeating the episode's first
observation.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

TASK_CODES = {"track": 0, "perturb_recover": 1, "token_generate": 2}
TASK_NAMES = {v: k for k, v in TASK_CODES.items()}

MAGIC = b"PDPD"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


class WindowError(IndexError):
    pass


@dataclass
class NormStats:
    obs_mean: np.ndarray
    obs_std: np.ndarray
    act_mean: np.ndarray
    act_std: np.ndarray

    def to_json(self) -> dict:
        return {
            "obs_mean": self.obs_mean.tolist(),
            "obs_std": self.obs_std.tolist(),
            "act_mean": self.act_mean.tolist(),
            "act_std": self.act_std.tolist(),
        }

    @staticmethod
    def from_json(d: dict) -> "NormStats":
        return NormStats(*(np.asarray(d[k], dtype=np.float64) for k in ("obs_mean", "obs_std", "act_mean", "act_std")))


@dataclass
class Transition:
    obs: np.ndarray
    stored_action: np.ndarray
    executed_action: np.ndarray
    episode_id: int
    step_index: int
    task_kind: str
    token: int


class Dataset:
    def __init__(self, obs_dim: int, act_dim: int, obs_history: int = 4, action_horizon: int = 1,
                 provenance: dict | None = None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.obs_history = obs_history
        self.action_horizon = action_horizon
        self.provenance = dict(provenance or {})
        self._obs: list[np.ndarray] = []
        self._stored: list[np.ndarray] = []
        self._executed: list[np.ndarray] = []
        self._ep_offsets: list[int] = []
        self._ep_lengths: list[int] = []
        self._ep_kinds: list[int] = []
        self._ep_tokens: list[int] = []
        self._n = 0
        self.norm: NormStats | None = None
        self._flat: dict | None = None

    # -- construction -------------------------------------------------------

    def add_episode(self, obs: np.ndarray, stored: np.ndarray, executed: np.ndarray,
                    task_kind: str, token: int = -1) -> None:
        obs = np.asarray(obs, dtype=np.float64)
        stored = np.asarray(stored, dtype=np.float64)
        executed = np.asarray(executed, dtype=np.float64)
        if obs.shape != (len(obs), self.obs_dim) or stored.shape != (len(obs), self.act_dim):
            raise ValueError(f"episode arrays mismatch: obs {obs.shape}, stored {stored.shape}")
        if executed.shape != stored.shape:
            raise ValueError("executed/stored shapes differ")
        if task_kind not in TASK_CODES:
            raise ValueError(f"unknown task kind {task_kind!r}")
        self._obs.append(obs)
        self._stored.append(stored)
        self._executed.append(executed)
        self._ep_offsets.append(self._n)
        self._ep_lengths.append(len(obs))
        self._ep_kinds.append(TASK_CODES[task_kind])
        self._ep_tokens.append(int(token))
        self._n += len(obs)
        self._flat = None

    def extend(self, other: "Dataset") -> None:
        if (other.obs_dim, other.act_dim) != (self.obs_dim, self.act_dim):
            raise ValueError("cannot merge datasets with different dims")
        for e in range(other.n_episodes):
            o, s, x = other.episode_arrays(e)
            self.add_episode(o, s, x, TASK_NAMES[other._ep_kinds[e]], other._ep_tokens[e])

    # -- views --------------------------------------------------------------

    @property
    def n_transitions(self) -> int:
        return self._n

    @property
    def n_episodes(self) -> int:
        return len(self._ep_offsets)

    def _flatten(self) -> dict:
        if self._flat is None:
            n = max(self._n, 0)
            obs = np.concatenate(self._obs, axis=0) if self._obs else np.zeros((0, self.obs_dim))
            stored = np.concatenate(self._stored, axis=0) if self._stored else np.zeros((0, self.act_dim))
            executed = np.concatenate(self._executed, axis=0) if self._executed else np.zeros((0, self.act_dim))
            ep_of = np.zeros(n, dtype=np.int64)
            for e, (off, ln) in enumerate(zip(self._ep_offsets, self._ep_lengths)):
                ep_of[off : off + ln] = e
            self._flat = {
                "obs": obs,
                "stored": stored,
                "executed": executed,
                "ep_of": ep_of,
                "offsets": np.asarray(self._ep_offsets, dtype=np.int64),
                "lengths": np.asarray(self._ep_lengths, dtype=np.int64),
                "tokens": np.asarray(self._ep_tokens, dtype=np.int64),
            }
        return self._flat

    def episode_arrays(self, e: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = self._flatten()
        lo = self._ep_offsets[e]
        hi = lo + self._ep_lengths[e]
        return f["obs"][lo:hi], f["stored"][lo:hi], f["executed"][lo:hi]

    def transition(self, t: int) -> Transition:
        f = self._flatten()
        e = int(f["ep_of"][t])
        return Transition(
            obs=f["obs"][t],
            stored_action=f["stored"][t],
            executed_action=f["executed"][t],
            episode_id=e,
            step_index=int(t - f["offsets"][e]),
            task_kind=TASK_NAMES[self._ep_kinds[e]],
            token=self._ep_tokens[e],
        )

    # -- normalization ------------------------------------------------------

    def finalize_normalization(self) -> NormStats:
        f = self._flatten()
        if self._n == 0:
            raise ValueError("cannot normalize an empty dataset")
        self.norm = NormStats(
            obs_mean=f["obs"].mean(axis=0),
            obs_std=np.maximum(f["obs"].std(axis=0), 1e-8),
            act_mean=f["stored"].mean(axis=0),
            act_std=np.maximum(f["stored"].std(axis=0), 1e-8),
        )
        return self.norm

    # -- windows ------------------------------------------------------------

    def valid_window_indices(self, obs_history: int | None = None, action_horizon: int | None = None) -> np.ndarray:
        """Global transition indices t whose action window stays inside the episode."""
        t_a = self.action_horizon if action_horizon is None else action_horizon
        f = self._flatten()
        local = np.arange(self._n) - f["offsets"][f["ep_of"]]
        return np.nonzero(local + t_a <= f["lengths"][f["ep_of"]])[0]

    def window(self, t: int, obs_history: int | None = None, action_horizon: int | None = None):
        """(O_t, A_t, token): history ends at t, action sequence begins at t."""
        t_o = self.obs_history if obs_history is None else obs_history
        t_a = self.action_horizon if action_horizon is None else action_horizon
        f = self._flatten()
        if not (0 <= t < self._n):
            raise WindowError(f"transition index {t} out of range [0, {self._n})")
        e = int(f["ep_of"][t])
        off, ln = int(f["offsets"][e]), int(f["lengths"][e])
        if (t - off) + t_a > ln:
            raise WindowError(f"action window of {t_a} at local step {t - off} crosses episode end ({ln})")
        obs_idx = np.maximum(np.arange(t - t_o + 1, t + 1), off)
        return f["obs"][obs_idx], f["stored"][t : t + t_a], int(f["tokens"][e])

    def window_batch(self, ts: np.ndarray, obs_history: int | None = None, action_horizon: int | None = None):
        """Vectorized windows: (B, T_o, obs_dim), (B, T_a, act_dim), (B,) tokens."""
        t_o = self.obs_history if obs_history is None else obs_history
        t_a = self.action_horizon if action_horizon is None else action_horizon
        f = self._flatten()
        ts = np.asarray(ts, dtype=np.int64)
        eps = f["ep_of"][ts]
        offs = f["offsets"][eps]
        if np.any(ts - offs + t_a > f["lengths"][eps]):
            raise WindowError("some action windows cross episode ends")
        obs_idx = np.maximum(ts[:, None] + np.arange(-t_o + 1, 1)[None, :], offs[:, None])
        act_idx = ts[:, None] + np.arange(t_a)[None, :]
        return f["obs"][obs_idx], f["stored"][act_idx], f["tokens"][eps]

    def next_obs(self, ts: np.ndarray) -> np.ndarray:
        """Successor observations (clamped at episode end); used by the C-VAE."""
        f = self._flatten()
        ts = np.asarray(ts, dtype=np.int64)
        eps = f["ep_of"][ts]
        last = f["offsets"][eps] + f["lengths"][eps] - 1
        return f["obs"][np.minimum(ts + 1, last)]

    # -- serialization ------------------------------------------------------

    def header_dict(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "obs_history": self.obs_history,
            "action_horizon": self.action_horizon,
            "n_transitions": self._n,
            "n_episodes": self.n_episodes,
            "norm": self.norm.to_json() if self.norm else None,
            "provenance": self.provenance,
        }

    def save(self, path) -> None:
        f = self._flatten()
        header = json.dumps(self.header_dict(), sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            table = np.stack(
                [f["offsets"], f["lengths"], np.asarray(self._ep_kinds, dtype=np.int64), f["tokens"]], axis=1
            ).astype("<i8")
            fh.write(table.tobytes())
            for arr in (f["obs"], f["stored"], f["executed"]):
                fh.write(arr.astype("<f8").tobytes())

    @staticmethod
    def load(path) -> "Dataset":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != MAGIC:
            raise DatasetFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        (hlen,) = struct.unpack_from("<I", raw, 8)
        try:
            header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DatasetFormatError(f"corrupt header: {e}") from e
        n, n_eps = header["n_transitions"], header["n_episodes"]
        obs_dim, act_dim = header["obs_dim"], header["act_dim"]
        pos = 12 + hlen
        need = n_eps * 4 * 8 + n * (obs_dim + 2 * act_dim) * 8
        if len(raw) - pos != need:
            raise DatasetFormatError(f"truncated payload: have {len(raw) - pos} bytes, need {need}")
        table = np.frombuffer(raw, dtype="<i8", count=n_eps * 4, offset=pos).reshape(n_eps, 4)
        pos += n_eps * 32
        out = Dataset(obs_dim, act_dim, header["obs_history"], header["action_horizon"], header["provenance"])

        def take(cols):
            nonlocal pos
            arr = np.frombuffer(raw, dtype="<f8", count=n * cols, offset=pos).reshape(n, cols).copy()
            pos += n * cols * 8
            return arr

        obs, stored, executed = take(obs_dim), take(act_dim), take(act_dim)
        if n_eps and (table[:, 0].min() < 0 or int((table[:, 0] + table[:, 1]).max()) > n):
            raise DatasetFormatError("episode table exceeds payload bounds")
        for off, ln, kind, token in table:
            out.add_episode(
                obs[off : off + ln], stored[off : off + ln], executed[off : off + ln],
                TASK_NAMES[int(kind)], int(token),
            )
        if out.n_transitions != n:
            raise DatasetFormatError(f"header counts {n} != recomputed {out.n_transitions}")
        if header["norm"] is not None:
            out.norm = NormStats.from_json(header["norm"])
        return out

    def export_jsonl(self, path) -> None:
        """Human-readable lossy export."""
        with open(path, "w", encoding="utf-8") as fh:
            for e in range(self.n_episodes):
                obs, stored, executed = self.episode_arrays(e)
                for i in range(len(obs)):
                    fh.write(
                        json.dumps(
                            {
                                "episode": e,
                                "step": i,
                                "task": TASK_NAMES[self._ep_kinds[e]],
                                "token": self._ep_tokens[e],
                                "obs": [round(float(x), 9) for x in obs[i]],
                                "stored": [round(float(x), 9) for x in stored[i]],
                                "executed": [round(float(x), 9) for x in executed[i]],
                            }
                        )
                        + "\n"
                    )

    def content_hash(self) -> str:
        f = self._flatten()
        crc = 0
        for arr in (f["obs"], f["stored"], f["executed"], f["offsets"], f["lengths"], f["tokens"]):
            crc = zlib.crc32(np.ascontiguousarray(arr).tobytes(), crc)
        return f"{crc:08x}"
