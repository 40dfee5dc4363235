"""TCKPT1 parameter files.

Layout: the 6-byte magic ``TCKPT1`` followed by one record per array::

    u32 name_length | utf-8 name | u32 rank | u32 extent * rank | f32 payload

All integers and floats are little-endian; payloads are row-major.
"""
from __future__ import annotations

import os
import struct
from collections import OrderedDict
from typing import Mapping

import numpy as np

MAGIC = b"TCKPT1"


class CheckpointError(ValueError):
    pass


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name, value in arrays.items():
        arr = np.asarray(value)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if not blob.startswith(MAGIC):
        raise CheckpointError("missing TCKPT1 magic")
    out = OrderedDict()
    pos = len(MAGIC)
    end = len(blob)
    try:
        while pos < end:
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            if pos + 4 * count > end:
                raise CheckpointError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"truncated record header: {exc}") from None
    return out


def save_checkpoint(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write atomically: a crash mid-write never clobbers the previous file."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode(arrays))
    os.replace(tmp, path)


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode(fh.read())
