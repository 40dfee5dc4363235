"""Cutting scenes into training tiles."""
from __future__ import annotations

from typing import Iterator, NamedTuple

import numpy as np

from .classes import NO_DATA
from .scene import Scene


class Tile(NamedTuple):
    bands: np.ndarray   # (B, t, t) at the scene resolution
    labels: np.ndarray  # (t, t) labels replicated to the band grid
    row: int            # pixel offset of the tile inside its scene
    col: int
    scene_id: str


def tile_origins(extent: int, tile_px: int, stride_px: int) -> list:
    if tile_px > extent:
        return []
    return list(range(0, extent - tile_px + 1, stride_px))


def count_tiles(height: int, width: int, tile_px: int, stride_px: int) -> int:
    """``(floor((H - t) / s) + 1) * (floor((W - t) / s) + 1)`` when the tile fits."""
    if tile_px > height or tile_px > width:
        return 0
    return ((height - tile_px) // stride_px + 1) * ((width - tile_px) // stride_px + 1)


def tile_iterator(scene: Scene, tile_px: int, stride_px: int, seed=None) -> Iterator[Tile]:
    """Tiles fully inside ``scene``; order shuffled by ``seed`` (row-major if None).

    Tiles whose labels are all NO_DATA are skipped.
    """
    if tile_px % 32:
        raise ValueError(f"tile_px must be divisible by 32, got {tile_px}")
    if stride_px < 1:
        raise ValueError("stride_px must be positive")
    h, w = scene.shape
    fine = scene.fine_labels()
    origins = [(r, c) for r in tile_origins(h, tile_px, stride_px) for c in tile_origins(w, tile_px, stride_px)]
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(origins))
        origins = [origins[i] for i in order]
    for r, c in origins:
        labels = fine[r:r + tile_px, c:c + tile_px]
        if np.all(labels == NO_DATA):
            continue
        yield Tile(scene.bands[:, r:r + tile_px, c:c + tile_px], labels, r, c, scene.id)
