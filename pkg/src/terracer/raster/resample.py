"""Moving bands and labels between the 10/20/60 m and 300 m grids."""
from __future__ import annotations

import math

import numpy as np

from ..autodiff.ops import bilinear_matrix
from .classes import NO_DATA


def resample_band(band: np.ndarray, from_m: float, to_m: float, shape=None) -> np.ndarray:
    """Bilinear when upsampling, box mean when downsampling by an integer factor."""
    band = np.asarray(band, dtype=np.float32)
    if shape is None:
        shape = (round(band.shape[0] * from_m / to_m), round(band.shape[1] * from_m / to_m))
    if tuple(shape) == band.shape:
        return band
    if to_m > from_m:
        factor = to_m / from_m
        f = int(round(factor))
        if abs(factor - f) < 1e-9 and band.shape[0] == shape[0] * f and band.shape[1] == shape[1] * f:
            return band.reshape(shape[0], f, shape[1], f).mean(axis=(1, 3), dtype=np.float64).astype(np.float32)
    rows = bilinear_matrix(band.shape[0], shape[0])
    cols = bilinear_matrix(band.shape[1], shape[1])
    return (rows @ band.astype(np.float64) @ cols.T).astype(np.float32)


def label_factor(label_resolution_m: float, resolution_m: float) -> int:
    factor = label_resolution_m / resolution_m
    f = int(round(factor))
    if f < 1 or abs(factor - f) > 1e-9:
        raise ValueError(f"label resolution {label_resolution_m} m is not an integer multiple of {resolution_m} m")
    return f


def interpolate_labels(labels: np.ndarray, from_m: float, to_m: float, shape=None) -> np.ndarray:
    """Nearest-neighbour replication of a categorical raster; never blends classes.

    ``shape`` crops the replicated raster to the image extent when the label
    grid overhangs it.
    """
    labels = np.asarray(labels)
    f = label_factor(from_m, to_m)
    out = labels if f == 1 else np.repeat(np.repeat(labels, f, axis=0), f, axis=1)
    if shape is not None:
        out = out[: shape[0], : shape[1]]
    return out


def mode_pool(labels: np.ndarray, factor: int) -> np.ndarray:
    """Most frequent non-NO_DATA value per ``factor`` x ``factor`` block (smallest on ties)."""
    labels = np.asarray(labels)
    h = math.ceil(labels.shape[0] / factor)
    w = math.ceil(labels.shape[1] / factor)
    out = np.full((h, w), NO_DATA, dtype=labels.dtype)
    for i in range(h):
        for j in range(w):
            block = labels[i * factor:(i + 1) * factor, j * factor:(j + 1) * factor].ravel()
            block = block[block != NO_DATA]
            if block.size:
                values, counts = np.unique(block, return_counts=True)
                out[i, j] = values[np.argmax(counts)]
    return out


def grid_mean_matrix(n_px: int, factor: int, offset: int = 0) -> np.ndarray:
    """``(n_cells, n_px)`` averaging weights onto the coarse grid.

    Pixel ``k`` of a window starting ``offset`` pixels into the scene belongs
    to cell ``(offset + k) // factor``; cells the window only partly covers
    average the pixels it does cover. Returns the matrix; the first covered
    cell index is ``offset // factor``.
    """
    first = offset // factor
    cells = (offset + np.arange(n_px)) // factor - first
    m = np.zeros((cells[-1] + 1, n_px))
    m[cells, np.arange(n_px)] = 1.0
    m /= m.sum(axis=1, keepdims=True)
    return m
