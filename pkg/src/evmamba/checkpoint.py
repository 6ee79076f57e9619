"""Checkpoint serialization.

Binary layout, all integers little-endian:

    8 bytes   magic "EVSSCKPT"
    u32       format version (currently 1)
    u32       tensor count
    per tensor:
        u32       name length, then that many UTF-8 bytes
        u8        rank
        rank*u64  extents
        raw float32 data, little-endian, row-major

Values are stored as float32 regardless of the active precision; loading
into 64-bit widens them exactly, so save -> load -> save is byte-identical.
The loader validates magic, version and total byte length and builds the
whole state dict before touching the model, so a corrupt file never leaves
a model partially updated.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .layers import Layer
from .tensor import get_dtype

MAGIC = b"EVSSCKPT"
VERSION = 1


def save_checkpoint(model: Layer, path) -> None:
    params = list(model.parameters())
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, t in params:
        nm = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nm)))
        chunks.append(nm)
        chunks.append(struct.pack("<B", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}Q", *t.shape) if t.ndim else b"")
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:8]!r}")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 16
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 4 > len(blob):
            raise CheckpointError(f"{path}: truncated tensor header")
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        if off + 1 > len(blob):
            raise CheckpointError(f"{path}: truncated rank for {name!r}")
        rank = blob[off]
        off += 1
        extents = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        n = int(np.prod(extents)) if rank else 1
        nbytes = 4 * n
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += nbytes
        if name in state:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        state[name] = data.reshape(extents)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return state


def apply_state(model: Layer, state: dict[str, np.ndarray]) -> None:
    """Copy a loaded state dict into the model, all-or-nothing."""
    params = dict(model.parameters())
    missing = sorted(set(params) - set(state))
    unexpected = sorted(set(state) - set(params))
    if missing or unexpected:
        raise CheckpointError(f"state mismatch: missing={missing} unexpected={unexpected}")
    for name, t in params.items():
        if tuple(state[name].shape) != t.shape:
            raise CheckpointError(f"shape mismatch for {name!r}: checkpoint "
                                  f"{state[name].shape}, model {t.shape}")
    dt = get_dtype()
    for name, t in params.items():
        t.data = np.ascontiguousarray(state[name], dtype=dt)
