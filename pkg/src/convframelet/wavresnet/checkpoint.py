"""Versioned binary checkpoints of network parameters and optimiser state.

Tensors are stored as little-endian float32 in the canonical layout order,
followed by optimiser velocities and any named auxiliary arrays.  Saving rounds the
in-memory state to float32 first, so a run that continues after a save and
a run resumed from that file follow exactly the same trajectory.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidArgumentError
from ..fileio import atomic_write, pack_container, unpack_container
from .network import ArchConfig, NetworkParams, buffer_layout, parameter_layout

MAGIC = b"CFWNCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: NetworkParams
    transform: dict | None = None
    train_state: dict | None = None
    velocity: dict[str, np.ndarray] | None = None
    extra: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def quantize_(arrays: dict[str, np.ndarray]) -> None:
    """Round every array to float32 precision in place."""
    for arr in arrays.values():
        arr[...] = arr.astype(np.float32)


def _layout(arch: ArchConfig, with_velocity: bool):
    entries = [("param", n, s) for n, s in parameter_layout(arch)]
    entries += [("buffer", n, s) for n, s in buffer_layout(arch)]
    if with_velocity:
        entries += [("velocity", n, s) for n, s in parameter_layout(arch)]
    return entries


def encode_checkpoint(ck: Checkpoint) -> bytes:
    p = ck.params
    quantize_(p.weights)
    quantize_(p.buffers)
    if ck.velocity is not None:
        quantize_(ck.velocity)
    p.input_scale = float(np.float32(p.input_scale))
    source = {"param": p.weights, "buffer": p.buffers, "velocity": ck.velocity}
    layout = _layout(p.arch, ck.velocity is not None)
    quantize_(ck.arrays)
    payload = b"".join(np.ascontiguousarray(source[kind][name], dtype="<f4").tobytes()
                       for kind, name, _ in layout)
    payload += b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in ck.arrays.values())
    header = {
        "arch": p.arch.to_config(),
        "input_scale": p.input_scale,
        "meta": p.meta,
        "transform": ck.transform,
        "train_state": ck.train_state,
        "extra": ck.extra,
        "tensors": [[kind, name, list(shape)] for kind, name, shape in layout],
        "arrays": [[name, list(a.shape)] for name, a in ck.arrays.items()],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    return pack_container(MAGIC, VERSION, header, payload)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    header, payload = unpack_container(blob, MAGIC, VERSION, "checkpoint")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise InvalidArgumentError("checkpoint checksum mismatch (file corrupted)")
    arch = ArchConfig.from_config(header["arch"])
    has_velocity = any(kind == "velocity" for kind, _, _ in header["tensors"])
    layout = _layout(arch, has_velocity)
    if [[k, n, list(s)] for k, n, s in layout] != header["tensors"]:
        raise InvalidArgumentError("checkpoint tensor list does not match its architecture")
    flat = np.frombuffer(payload, dtype="<f4")
    arrays_layout = [(name, tuple(shape)) for name, shape in header.get("arrays", [])]
    total = sum(int(np.prod(s)) for _, _, s in layout) + sum(int(np.prod(s)) for _, s in arrays_layout)
    if flat.size != total:
        raise InvalidArgumentError(f"checkpoint payload holds {flat.size} values, expected {total}")
    out = {"param": {}, "buffer": {}, "velocity": {}}
    off = 0
    for kind, name, shape in layout:
        n = int(np.prod(shape))
        out[kind][name] = flat[off:off + n].astype(np.float64).reshape(shape)
        off += n
    arrays = {}
    for name, shape in arrays_layout:
        n = int(np.prod(shape))
        arrays[name] = flat[off:off + n].astype(np.float64).reshape(shape)
        off += n
    params = NetworkParams(arch, out["param"], out["buffer"], float(header["input_scale"]), header["meta"])
    return Checkpoint(params, header["transform"], header["train_state"],
                      out["velocity"] if has_velocity else None, header.get("extra") or {}, arrays)


def save_checkpoint(path, ck: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
