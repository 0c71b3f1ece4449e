"""Weight persistence: magic "PDPW", versioned JSON header, f64 payload, CRC32."""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from ..expert.nets import ExpertPolicy
from ..numerics import Rng
from ..numerics.modules import set_params
from .networks import CvaeBaseline, DenoiserConfig, DenoiserNetwork, MlpPolicy
from .schedule import cosine_schedule
from .training import PolicyBundle, StudentConfig

MAGIC = b"PDPW"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _write(path, header: dict, params: list) -> None:
    names = [(name, list(p.data.shape)) for name, p in params]
    header = dict(header, params=names)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate([p.data.reshape(-1) for _, p in params]) if params else np.zeros(0)
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<I", len(hbytes))
    buf += hbytes
    buf += struct.pack("<Q", payload.size)
    buf += payload.astype("<f8").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def _read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise CheckpointFormatError("CRC32 mismatch: checkpoint corrupted")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    pos = 12 + hlen
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    flat = np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
    values = {}
    at = 0
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        values[name] = flat[at : at + n].reshape(shape).copy()
        at += n
    if at != count:
        raise CheckpointFormatError(f"payload count {count} != sum of param sizes {at}")
    return header, values


def save_policy(path, bundle: PolicyBundle) -> None:
    header = {
        "kind": bundle.kind,
        "student_config": bundle.config.to_json(),
        "denoiser_config": bundle.denoiser_config.to_json(),
        "schedule": bundle.schedule.to_json() if bundle.schedule else None,
        "norm": bundle.norm.to_json(),
        "provenance": bundle.provenance,
    }
    _write(path, header, bundle.net.params())


def load_policy(path) -> PolicyBundle:
    header, values = _read(path)
    if header["kind"] not in ("diffusion", "mlp", "cvae"):
        raise CheckpointFormatError(f"not a student checkpoint: kind {header['kind']!r}")
    cfg = StudentConfig.from_json(header["student_config"])
    dcfg = DenoiserConfig.from_json(header["denoiser_config"])
    rng = Rng(0)
    if header["kind"] == "diffusion":
        net = DenoiserNetwork(rng, dcfg)
        schedule = cosine_schedule(header["schedule"]["num_steps"], header["schedule"]["shift"])
    elif header["kind"] == "mlp":
        net = MlpPolicy(rng, dcfg, hidden=cfg.mlp_hidden)
        schedule = None
    else:
        net = CvaeBaseline(rng, dcfg, latent_dim=cfg.cvae_latent, beta=cfg.cvae_beta, hidden=cfg.cvae_hidden)
        schedule = None
    set_params(net.params(), values)
    from ..datagen.dataset import NormStats

    return PolicyBundle(
        kind=header["kind"], config=cfg, denoiser_config=dcfg, net=net,
        norm=NormStats.from_json(header["norm"]), schedule=schedule,
        provenance=header.get("provenance", {}),
    )


def save_expert(path, expert: ExpertPolicy) -> None:
    header = {
        "kind": "expert",
        "arch": {
            "obs_dim": expert.obs_dim,
            "act_dim": expert.act_dim,
            "hidden": [w.data.shape[1] for n, w in expert.actor.params() if n.endswith(".w")][:-1],
            "action_scale": expert.action_scale,
            "task_subset_id": expert.task_subset_id,
        },
        "schedule": None,
        "norm": None,
        "provenance": {},
    }
    _write(path, header, expert.params())


def load_expert(path) -> ExpertPolicy:
    header, values = _read(path)
    if header["kind"] != "expert":
        raise CheckpointFormatError(f"not an expert checkpoint: kind {header['kind']!r}")
    arch = header["arch"]
    expert = ExpertPolicy(
        Rng(0), arch["obs_dim"], arch["act_dim"], hidden=tuple(arch["hidden"]),
        action_scale=arch["action_scale"], task_subset_id=arch["task_subset_id"],
    )
    set_params(expert.params(), values)
    return expert
