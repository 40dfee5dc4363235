"""Co-registered band stacks and label rasters."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .classes import NO_DATA, ClassTable
from .resample import interpolate_labels, label_factor

SENTINEL2_BANDS = ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8a", "B9", "B10", "B11", "B12")
# B1..B8a, regularly spread over the visible/red-edge/NIR range.
NINE_BANDS = SENTINEL2_BANDS[:9]
BAND_MODES = ("all13", "nine_b1_to_b8a")


class SceneError(ValueError):
    pass


@dataclass
class Scene:
    """One sample: ``bands`` (B, H, W) at ``resolution_m`` and ``labels`` (Hl, Wl) ids."""

    id: str
    bands: np.ndarray
    band_ids: tuple
    resolution_m: float
    labels: np.ndarray
    label_resolution_m: float
    class_table: ClassTable
    acquisition_tag: str = ""
    cloud_mask: Optional[np.ndarray] = None
    split: str = "train"

    @property
    def shape(self) -> tuple:
        return self.bands.shape[1:]

    @property
    def label_factor(self) -> int:
        return label_factor(self.label_resolution_m, self.resolution_m)

    def fine_labels(self) -> np.ndarray:
        """Labels replicated onto the band grid."""
        return interpolate_labels(self.labels, self.label_resolution_m, self.resolution_m, self.shape)

    def check(self) -> "Scene":
        if self.bands.ndim != 3 or len(self.band_ids) != self.bands.shape[0]:
            raise SceneError(f"{self.id}: band stack {self.bands.shape} does not match band ids {self.band_ids}")
        h, w = self.shape
        hl, wl = self.labels.shape
        for px, cells in ((h, hl), (w, wl)):
            if abs(px * self.resolution_m - cells * self.label_resolution_m) > self.label_resolution_m:
                raise SceneError(
                    f"{self.id}: band footprint {px * self.resolution_m} m and label footprint "
                    f"{cells * self.label_resolution_m} m disagree by more than one label pixel"
                )
        if cells_needed(h, self.label_factor) > hl or cells_needed(w, self.label_factor) > wl:
            raise SceneError(f"{self.id}: label grid does not cover the band grid")
        valid = self.labels[self.labels != NO_DATA]
        if valid.size and valid.max() >= len(self.class_table):
            raise SceneError(f"{self.id}: label id {valid.max()} outside the class table")
        return self


def cells_needed(px: int, factor: int) -> int:
    return math.ceil(px / factor)


def band_subset(scene: Scene, mode: str = "all13") -> Scene:
    """``all13`` keeps every band; ``nine_b1_to_b8a`` keeps B1..B8a in wavelength order."""
    if mode == "all13":
        return scene
    if mode != "nine_b1_to_b8a":
        raise SceneError(f"unknown band mode {mode!r}; choose from {BAND_MODES}")
    return select_bands(scene, NINE_BANDS)


def select_bands(scene: Scene, names) -> Scene:
    index = {b: i for i, b in enumerate(scene.band_ids)}
    missing = [n for n in names if n not in index]
    if missing:
        raise SceneError(f"{scene.id}: bands {missing} not present (have {list(scene.band_ids)})")
    rows = [index[n] for n in names]
    return replace(scene, bands=scene.bands[rows], band_ids=tuple(names))


def normalize_bands(bands: np.ndarray, band_ids, normalization: dict) -> np.ndarray:
    """Per-band affine scaling with ``{"bands": [...], "mean": [...], "std": [...]}``."""
    lookup = {b: (m, s) for b, m, s in zip(normalization["bands"], normalization["mean"], normalization["std"])}
    try:
        stats = np.array([lookup[b] for b in band_ids], dtype=np.float64)
    except KeyError as exc:
        raise SceneError(f"no normalization statistics for band {exc.args[0]}") from None
    mean = stats[:, 0].reshape(-1, 1, 1)
    std = stats[:, 1].reshape(-1, 1, 1)
    return ((bands - mean) / std).astype(np.float32)


def compute_normalization(scenes) -> dict:
    """Mean and standard deviation per band over every pixel of ``scenes``."""
    scenes = list(scenes)
    band_ids = scenes[0].band_ids
    total = np.zeros(len(band_ids))
    sq = np.zeros(len(band_ids))
    count = 0
    for s in scenes:
        if s.band_ids != band_ids:
            raise SceneError("scenes disagree on band order")
        flat = s.bands.reshape(len(band_ids), -1).astype(np.float64)
        total += flat.sum(axis=1)
        sq += (flat**2).sum(axis=1)
        count += flat.shape[1]
    mean = total / count
    std = np.sqrt(np.maximum(sq / count - mean**2, 1e-12))
    return {"bands": list(band_ids), "mean": mean.tolist(), "std": std.tolist()}
