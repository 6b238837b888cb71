"""File formats: raw tensors with a header, 16-bit PGM, atomic writes."""
from __future__ import annotations

import json
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

TENSOR_MAGIC = b"CFTENSR\x00"
TENSOR_VERSION = 1


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def pack_container(magic: bytes, version: int, header: dict, payload: bytes) -> bytes:
    """``magic | u32 version | u64 header length | JSON header | payload``."""
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<IQ", version, len(head)) + head + payload


def unpack_container(blob: bytes, magic: bytes, version: int, what: str) -> tuple[dict, bytes]:
    if not blob.startswith(magic):
        raise InvalidArgumentError(f"not a {what} file (bad magic bytes)")
    off = len(magic)
    if len(blob) < off + 12:
        raise InvalidArgumentError(f"truncated {what} file")
    got_version, head_len = struct.unpack_from("<IQ", blob, off)
    if got_version != version:
        raise InvalidArgumentError(f"unsupported {what} version {got_version} (expected {version})")
    off += 12
    if len(blob) < off + head_len:
        raise InvalidArgumentError(f"truncated {what} header")
    try:
        header = json.loads(blob[off:off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"corrupt {what} header: {exc}") from None
    return header, blob[off + head_len:]


def save_tensor(path, array, meta: dict | None = None) -> None:
    """Exact float64 little-endian dump with shape and free-form metadata."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = {"shape": list(arr.shape), "dtype": "float64-le", "meta": meta or {}}
    atomic_write(path, pack_container(TENSOR_MAGIC, TENSOR_VERSION, header, arr.tobytes()))


def load_tensor(path) -> tuple[np.ndarray, dict]:
    header, payload = unpack_container(Path(path).read_bytes(), TENSOR_MAGIC, TENSOR_VERSION, "tensor")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(payload) != expected:
        raise InvalidArgumentError(f"tensor payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64), header["meta"]


def to_pgm16(image: np.ndarray, lo: float, hi: float) -> bytes:
    """16-bit binary PGM of ``image`` windowed linearly to ``[lo, hi]``."""
    if not hi > lo:
        raise InvalidArgumentError("display window must have hi > lo")
    arr = np.asarray(image, dtype=np.float64)
    scaled = np.clip(np.rint((arr - lo) / (hi - lo) * 65535.0), 0, 65535).astype(">u2")
    h, w = arr.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + scaled.tobytes()


def save_pgm(path, image, lo: float = 0.0, hi: float = 1.0) -> None:
    atomic_write(path, to_pgm16(image, lo, hi))


def read_pgm16(path) -> np.ndarray:
    """Raw 16-bit samples of a PGM written by :func:`save_pgm`."""
    blob = Path(path).read_bytes()
    # exactly one whitespace byte separates the header from the samples
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+65535\s", blob)
    if m is None:
        raise InvalidArgumentError("not a 16-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    data = blob[m.end():m.end() + 2 * w * h]
    if len(data) != 2 * w * h:
        raise InvalidArgumentError("truncated PGM sample data")
    return np.frombuffer(data, dtype=">u2").reshape(h, w).astype(np.int64)
