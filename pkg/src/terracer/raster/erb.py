"""ERB1 raster payloads: headerless little-endian rows (f32 bands, u16 labels).

Extents are not stored in the file; they come from the manifest (or the
``.json`` sidecar written next to prediction maps).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2")}


class RasterError(ValueError):
    pass


def write_erb(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype.kind == "f":
        kind = "f32"
    elif array.dtype.kind in "ui":
        kind = "u16"
        if array.size and (array.min() < 0 or array.max() > 65535):
            raise RasterError("label values do not fit in u16")
    else:
        raise RasterError(f"unsupported dtype {array.dtype}")
    Path(path).write_bytes(np.ascontiguousarray(array, dtype=DTYPES[kind]).tobytes())


def read_erb(path, height: int, width: int, kind: str = "f32") -> np.ndarray:
    dtype = DTYPES[kind]
    path = Path(path)
    if not path.exists():
        raise RasterError(f"missing raster file {path}")
    raw = path.read_bytes()
    expected = height * width * dtype.itemsize
    if len(raw) != expected:
        raise RasterError(f"{path}: {len(raw)} bytes, expected {expected} for {height}x{width} {kind}")
    native = np.float32 if kind == "f32" else np.uint16
    return np.frombuffer(raw, dtype=dtype).reshape(height, width).astype(native)


def write_label_map(path, labels: np.ndarray, resolution_m: float, **extra) -> None:
    """ERB1 u16 label raster plus a ``<path>.json`` sidecar recording its extents."""
    labels = np.asarray(labels)
    write_erb(path, labels.astype(np.uint16))
    meta = {"height": int(labels.shape[0]), "width": int(labels.shape[1]), "dtype": "u16", "resolution_m": resolution_m}
    meta.update(extra)
    Path(f"{path}.json").write_text(json.dumps(meta))


def read_label_map(path) -> tuple:
    meta = json.loads(Path(f"{path}.json").read_text())
    return read_erb(path, meta["height"], meta["width"], "u16"), meta
