"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic           4 bytes  b"BGCK"
    version         u8       currently 1
    meta_len        u32      length of the UTF-8 JSON metadata blob
    meta            bytes    config echo: model/train configs, step, RNG state
    n_tensors       u32
    per tensor:
        name_len    u16      UTF-8 name follows
        name        bytes
        ndim        u8
        dims        u32 * ndim
        dtype       u8       0 = float32 (the only stored dtype)
        data        raw little-endian float32

Parameter names are namespaced (``gen.*``, ``disc.*``, ``opt_g.m.*`` ...)
so generator, discriminators, and optimizer state share one container.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from vqcodec.errors import FormatError, LengthError, VersionError

MAGIC = b"BGCK"
VERSION = 1
_DTYPE_F32 = 0


def save_checkpoint(path, meta: dict, arrays: dict):
    """Write metadata and named float32 tensors to ``path``."""
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(struct.pack("<B", _DTYPE_F32))
            fh.write(data.tobytes())


def _read(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise LengthError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint, returning (meta dict, {name: float32 array})."""
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise FormatError(f"{path} is not a checkpoint (bad magic)")
        version = struct.unpack("<B", _read(fh, 1, "version"))[0]
        if version != VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        meta_len = struct.unpack("<I", _read(fh, 4, "meta length"))[0]
        meta = json.loads(_read(fh, meta_len, "metadata").decode("utf-8"))
        n_tensors = struct.unpack("<I", _read(fh, 4, "tensor count"))[0]
        arrays = {}
        for _ in range(n_tensors):
            name_len = struct.unpack("<H", _read(fh, 2, "name length"))[0]
            name = _read(fh, name_len, "name").decode("utf-8")
            ndim = struct.unpack("<B", _read(fh, 1, "ndim"))[0]
            shape = tuple(
                struct.unpack("<I", _read(fh, 4, "dim"))[0] for _ in range(ndim)
            )
            dtype = struct.unpack("<B", _read(fh, 1, "dtype"))[0]
            if dtype != _DTYPE_F32:
                raise FormatError(f"tensor '{name}' has unknown dtype tag {dtype}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read(fh, 4 * count, f"tensor '{name}' data")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise LengthError(f"{path} has trailing bytes after the last tensor")
    return meta, arrays
