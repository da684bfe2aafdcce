"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      4 bytes  b"PSCK"
    version    u32
    config_len u32, then config_len bytes of UTF-8 JSON
    count      u32
    count times:
        name_len u16, name (UTF-8)
        ndim     u8, then ndim x u32 dims
        payload  prod(dims) x float32 (little-endian)
"""

from __future__ import annotations

import json
import struct
from typing import Mapping, Sequence

import numpy as np

from .tensor import Parameter

__all__ = ["CheckpointError", "save_checkpoint", "read_checkpoint", "load_into",
           "CHECKPOINT_VERSION"]

MAGIC = b"PSCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: Sequence[Parameter], config: Mapping) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, clen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    config = json.loads(raw[off:off + clen].decode("utf-8"))
    off += clen
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
    return config, arrays


def load_into(params: Sequence[Parameter], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into ``params``, validating names and shapes."""
    expected = {p.name for p in params}
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for p in params:
        a = arrays[p.name]
        if a.shape != p.data.shape:
            raise CheckpointError(f"{p.name}: shape {a.shape} != model {p.data.shape}")
        p.data[...] = a.astype(p.dtype)
