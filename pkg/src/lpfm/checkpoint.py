"""Binary parameter checkpoints.

Layout (little-endian)::

    b"LPFM" | u32 version | 32-byte sha256 of the config JSON | u32 count
    count x ( u32 name_len | name utf-8 | u32 ndim | ndim x u64 dims | f64 data )
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"LPFM"
VERSION = 1


def config_digest(cfg: dict) -> bytes:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).digest()


def save_checkpoint(path, params: dict, cfg: dict) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION), config_digest(cfg), struct.pack("<I", len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, cfg: dict | None = None) -> dict[str, np.ndarray]:
    """Read parameters; with ``cfg`` given, its digest must match the header."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"truncated checkpoint, wanted {n} bytes", pos)
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    digest = take(32)
    if cfg is not None and digest != config_digest(cfg):
        raise FormatError("checkpoint was written for a different config", 8)
    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(float)
    if pos != len(raw):
        raise FormatError("trailing bytes after last parameter", pos)
    return out
