"""CTAC checkpoint files.

Layout (little-endian)::

    4s   magic "CTAC"
    u32  format version
    u32  metadata length L, then L bytes of UTF-8 JSON
         (run config, rng state, episode counter, optimiser counters)
    u32  tensor count T, then T records of
         u16 name length, name bytes, u8 ndim, ndim x u32 dims, float64 values
    32s  SHA-256 of every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn_core import AdamState

MAGIC = b"CTAC"
VERSION = 1
_ADAM_HYPER = ("t", "lr", "beta1", "beta2", "eps", "weight_decay")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    optimizers: dict[str, AdamState]
    rng_state: dict
    episode: int


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def dumps(ckpt: Checkpoint) -> bytes:
    meta = {
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "episode": ckpt.episode,
        "optimizers": {k: {h: getattr(s, h) for h in _ADAM_HYPER} for k, s in ckpt.optimizers.items()},
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    for group, state in ckpt.optimizers.items():
        tensors += [(f"adam/{group}/m/{k}", v) for k, v in state.m.items()]
        tensors += [(f"adam/{group}/v/{k}", v) for k, v in state.v.items()]
    body = [MAGIC, struct.pack("<II", VERSION, len(meta_raw)), meta_raw,
            struct.pack("<I", len(tensors))]
    body += [_pack_tensor(name, arr) for name, arr in tensors]
    payload = b"".join(body)
    return payload + hashlib.sha256(payload).digest()


def loads(data: bytes) -> Checkpoint:
    if len(data) < 44 or data[:4] != MAGIC:
        raise CheckpointError("not a CTAC checkpoint")
    payload, digest = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, meta_len = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(payload[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        tensors[name] = arr.astype(np.float64)  # owned, writable copy
    if off != len(payload):
        raise CheckpointError("trailing bytes after tensor table")

    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    optimizers = {}
    for group, hyper in meta["optimizers"].items():
        m = {k.split("/", 3)[3]: v for k, v in tensors.items() if k.startswith(f"adam/{group}/m/")}
        v = {k.split("/", 3)[3]: t for k, t in tensors.items() if k.startswith(f"adam/{group}/v/")}
        optimizers[group] = AdamState(m, v, **hyper)
    return Checkpoint(meta["config"], params, optimizers, meta["rng_state"], meta["episode"])


def save(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())


def from_trainer(trainer, config: dict) -> Checkpoint:
    return Checkpoint(config, trainer.params,
                      {"policy": trainer.policy_opt, "value": trainer.value_opt},
                      trainer.rng.bit_generator.state, trainer.episode)


def restore_trainer(trainer, ckpt: Checkpoint) -> None:
    """Overwrite a freshly built trainer's state with the checkpoint's."""
    missing = set(trainer.params) ^ set(ckpt.params)
    if missing:
        raise CheckpointError(f"parameter names differ: {sorted(missing)[:3]}")
    for k, v in ckpt.params.items():
        if v.shape != trainer.params[k].shape:
            raise CheckpointError(f"{k}: checkpoint shape {v.shape} vs model {trainer.params[k].shape}")
    trainer.params = ckpt.params
    trainer.policy_opt = ckpt.optimizers["policy"]
    trainer.value_opt = ckpt.optimizers["value"]
    trainer.rng.bit_generator.state = ckpt.rng_state
    trainer.episode = ckpt.episode
