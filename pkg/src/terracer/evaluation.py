"""Prediction, confusion matrices and boundary-eroded accuracy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.nn import Module
from .autodiff.tensor import Tensor, no_grad
from .models.segnet import SegNetMultiscale
from .parallel import map_ordered
from .raster.classes import NO_DATA, ClassTable
from .raster.manifest import load_manifest
from .raster.resample import grid_mean_matrix
from .raster.scene import Scene, band_subset, normalize_bands

EROSION_MEASURES = ("boundary", "center")

# Fixed preview colours, cycled for class ids past the end of the list.
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
        (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
        (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
        (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
        (255, 255, 255), (0, 0, 0), (100, 149, 237), (255, 160, 122),
    ],
    dtype=np.uint8,
)
NO_DATA_COLOUR = np.array((40, 40, 40), dtype=np.uint8)


# ---------------------------------------------------------------- confusion

@dataclass
class ConfusionMatrix:
    """``counts[reference, prediction]`` over evaluated pixels."""

    counts: np.ndarray
    class_table: Optional[ClassTable] = None

    @classmethod
    def empty(cls, num_classes: int, class_table=None) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), class_table)

    @classmethod
    def from_maps(cls, reference, prediction, num_classes: int, mask=None, class_table=None) -> "ConfusionMatrix":
        reference = np.asarray(reference)
        prediction = np.asarray(prediction)
        if reference.shape != prediction.shape:
            raise ValueError(f"reference {reference.shape} and prediction {prediction.shape} differ in shape")
        keep = reference != NO_DATA
        if mask is not None:
            keep &= ~np.asarray(mask, dtype=bool)
        r = reference[keep].astype(np.int64)
        p = prediction[keep].astype(np.int64)
        if r.size and (r.max() >= num_classes or p.max() >= num_classes or p.min() < 0):
            raise ValueError("class id outside the confusion matrix")
        counts = np.bincount(r * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)
        return cls(counts.astype(np.int64), class_table)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def oa(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else float("nan")

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def recall(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.counts) / self.counts.sum(axis=1)

    def precision(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.counts) / self.counts.sum(axis=0)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.class_table or other.class_table)

    __add__ = merge

    def most_confused(self, k: int = 5) -> list:
        """Largest off-diagonal counts as ``(reference, prediction, count)``."""
        off = self.counts.copy()
        np.fill_diagonal(off, 0)
        flat = np.argsort(-off, axis=None, kind="stable")[:k]
        pairs = []
        for f in flat:
            i, j = divmod(int(f), self.num_classes)
            if off[i, j] == 0:
                break
            pairs.append((i, j, int(off[i, j])))
        return pairs

    def name(self, class_id: int) -> str:
        if self.class_table is not None and class_id < len(self.class_table):
            return self.class_table.entries[class_id].name
        return str(class_id)

    def to_dict(self) -> dict:
        recall, precision, support = self.recall(), self.precision(), self.support()
        clean = lambda v: None if math.isnan(v) else float(v)  # noqa: E731
        return {
            "oa": clean(self.oa()),
            "per_class": [
                {
                    "id": i,
                    "name": self.name(i),
                    "recall": clean(recall[i]),
                    "precision": clean(precision[i]),
                    "support": int(support[i]),
                }
                for i in range(self.num_classes)
            ],
            "confusion": self.counts.tolist(),
            "most_confused": [
                {"reference": i, "prediction": j, "reference_name": self.name(i), "prediction_name": self.name(j), "count": c}
                for i, j, c in self.most_confused()
            ],
        }


# ---------------------------------------------------------------- erosion

def disk_offsets(radius_px: float, measure: str = "boundary") -> list:
    """Non-zero integer offsets whose distance is within ``radius_px``.

    ``center`` measures centre to centre; ``boundary`` measures from the
    pixel centre to the nearest point of the other pixel's square footprint.
    """
    if measure not in EROSION_MEASURES:
        raise ValueError(f"erosion measure must be one of {EROSION_MEASURES}")
    reach = int(math.floor(radius_px + (0.5 if measure == "boundary" else 0.0))) + 1
    out = []
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            if dy == 0 and dx == 0:
                continue
            if measure == "center":
                d2 = dy * dy + dx * dx
            else:
                d2 = max(abs(dy) - 0.5, 0.0) ** 2 + max(abs(dx) - 0.5, 0.0) ** 2
            if d2 <= radius_px * radius_px + 1e-9:
                out.append((dy, dx))
    return out


def erode_reference(labels, radius_m: float, resolution_m: float, measure: str = "boundary") -> np.ndarray:
    """Boolean mask of reference pixels excluded from scoring.

    A pixel is excluded when a pixel with a different label (NO_DATA counts
    as different) lies within ``radius_m``. Pixels beyond the raster edge
    do not count.
    """
    if radius_m < 0:
        raise ValueError("radius_m must be non-negative")
    labels = np.asarray(labels)
    h, w = labels.shape
    mask = np.zeros((h, w), dtype=bool)
    for dy, dx in disk_offsets(radius_m / resolution_m, measure):
        if abs(dy) >= h or abs(dx) >= w:
            continue
        ys = slice(max(dy, 0), h + min(dy, 0))
        yd = slice(max(-dy, 0), h + min(-dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        xd = slice(max(-dx, 0), w + min(-dx, 0))
        # pixel (y, x) in the destination window sees neighbour (y + dy, x + dx)
        mask[yd, xd] |= labels[yd, xd] != labels[ys, xs]
    return mask


# ---------------------------------------------------------------- prediction

def _pad_to(bands: np.ndarray, multiple: int) -> np.ndarray:
    h, w = bands.shape[-2:]
    ph = -h % multiple
    pw = -w % multiple
    if not ph and not pw:
        return bands
    return np.pad(bands, ((0, 0), (0, ph), (0, pw)), mode="edge")


def _full_res_logits(model: Module, x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) scores at input resolution; SegNet heads are upsampled and averaged."""
    with no_grad():
        out = model(Tensor(x))
    if isinstance(out, list):
        size = x.shape[-2:]
        total = 0.0
        for head in out:
            total = total + ops.upsample(head, size=size, mode="bilinear").data
        return total / len(out)
    return out.data


def _windows(extent: int, tile: int, halo: int, multiple: int) -> list:
    """(core_start, core_end, window_start, window_end) covering ``extent``."""
    length = min(extent, -(-(tile + 2 * halo + multiple) // multiple) * multiple)
    out = []
    for core in range(0, extent, tile):
        core_end = min(core + tile, extent)
        start = min((max(core - halo, 0) // multiple) * multiple, extent - length)
        out.append((core, core_end, start, start + length))
    return out


def predict_logits(model: Module, bands: np.ndarray, tile_px: Optional[int] = None, halo_px: int = 32) -> np.ndarray:
    """Full-resolution class scores ``(C, H, W)`` for one normalized band stack.

    With ``tile_px`` the scene is processed in windows of ``tile_px`` plus
    ``halo_px`` context on each side; only window centres are kept.
    """
    model.eval()
    h, w = bands.shape[-2:]
    multiple = model.cfg.downsampling
    padded = _pad_to(np.asarray(bands, dtype=np.float32), multiple)
    ph, pw = padded.shape[-2:]
    if tile_px is None or (tile_px >= ph and tile_px >= pw):
        return _full_res_logits(model, padded[None])[0, :, :h, :w]
    jobs = [(r, c) for r in _windows(ph, tile_px, halo_px, multiple) for c in _windows(pw, tile_px, halo_px, multiple)]

    def run(job):
        (r0, r1, rs, re), (c0, c1, cs, ce) = job
        out = _full_res_logits(model, padded[None, :, rs:re, cs:ce])[0]
        return out[:, r0 - rs:r1 - rs, c0 - cs:c1 - cs]

    result = None
    for ((r0, r1, _, _), (c0, c1, _, _)), part in zip(jobs, map_ordered(run, jobs)):
        if result is None:
            result = np.empty((part.shape[0], ph, pw), dtype=part.dtype)
        result[:, r0:r1, c0:c1] = part
    return result[:, :h, :w]


def pool_to_grid(logits: np.ndarray, factor: int) -> np.ndarray:
    """Box-mean ``(C, H, W)`` scores onto the ``factor``-coarser grid (partial cells included)."""
    rows = grid_mean_matrix(logits.shape[-2], factor)
    cols = grid_mean_matrix(logits.shape[-1], factor)
    return rows @ logits.astype(np.float64) @ cols.T


def argmax_map(logits: np.ndarray) -> np.ndarray:
    """Class map; ties resolve to the smaller class id."""
    return np.argmax(logits, axis=0).astype(np.uint16)


def predict_map(model: Module, bands: np.ndarray, strategy: str, factor: int = 15, tile_px=None, halo_px: int = 32):
    """``fine``: 20 m argmax. ``coarse``: argmax after pooling onto the label grid."""
    logits = predict_logits(model, bands, tile_px, halo_px)
    if strategy == "fine":
        return argmax_map(logits)
    if strategy == "coarse":
        return argmax_map(pool_to_grid(logits, factor))
    raise ValueError(f"unknown strategy {strategy!r}")


def default_strategy(model: Module) -> str:
    return "coarse" if isinstance(model, SegNetMultiscale) else "fine"


def scene_inputs(scene: Scene, normalization: Optional[dict], band_mode: str) -> np.ndarray:
    s = band_subset(scene, band_mode)
    if normalization is None:
        return s.bands.astype(np.float32)
    return normalize_bands(s.bands, s.band_ids, normalization)


def reference_for(scene: Scene, strategy: str) -> tuple:
    """(reference labels, their resolution) on the grid the strategy is scored on."""
    if strategy == "fine":
        return scene.fine_labels(), scene.resolution_m
    return scene.labels, scene.label_resolution_m


def evaluate_scene(
    model, scene: Scene, strategy: str, radius_m: float, normalization=None, band_mode: str = "all13",
    measure: str = "boundary", tile_px=None,
) -> tuple:
    bands = scene_inputs(scene, normalization, band_mode)
    pred = predict_map(model, bands, strategy, scene.label_factor, tile_px)
    reference, res = reference_for(scene, strategy)
    excluded = erode_reference(reference, radius_m, res, measure)
    cm = ConfusionMatrix.from_maps(reference, pred, len(scene.class_table), excluded, scene.class_table)
    valid = int((reference != NO_DATA).sum())
    dropped = int((excluded & (reference != NO_DATA)).sum())
    return cm, valid, dropped, pred


def evaluate(
    model: Module,
    manifest,
    split: str = "test",
    radius_m: float = 200.0,
    strategy: Optional[str] = None,
    normalization: Optional[dict] = None,
    band_mode: str = "all13",
    measure: str = "boundary",
    tile_px: Optional[int] = None,
) -> tuple:
    """Confusion matrix over every ``split`` scene, plus the JSON-ready report."""
    manifest = load_manifest(manifest) if isinstance(manifest, (str, Path)) else manifest
    strategy = strategy or default_strategy(model)
    normalization = normalization if normalization is not None else manifest.normalization
    entries = manifest.entries(split)
    if not entries:
        raise ValueError(f"no scenes in split {split!r}")
    total = ConfusionMatrix.empty(len(manifest.class_table), manifest.class_table)
    valid = dropped = 0
    for entry in entries:
        scene = manifest.load(entry)
        cm, v, d, _ = evaluate_scene(model, scene, strategy, radius_m, normalization, band_mode, measure, tile_px)
        total = total.merge(cm)
        valid += v
        dropped += d
    report = total.to_dict()
    reference_res = manifest.load(entries[0]).resolution_m if strategy == "fine" else float(entries[0]["label_resolution_m"])
    report.update(
        {
            "excluded_fraction": dropped / valid if valid else 0.0,
            "evaluated_pixels": total.total,
            "split": split,
            "strategy": strategy,
            "erosion": {"radius_m": radius_m, "grid_resolution_m": reference_res, "measure": measure},
            "scenes": [e["id"] for e in entries],
        }
    )
    return total, report


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2))
    return path


# ---------------------------------------------------------------- preview

def colorize(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    rgb = PALETTE[np.where(labels == NO_DATA, 0, labels) % len(PALETTE)]
    rgb[labels == NO_DATA] = NO_DATA_COLOUR
    return rgb


def write_ppm(path, labels: np.ndarray) -> Path:
    """Binary P6 preview, one fixed colour per class id."""
    rgb = colorize(labels)
    h, w = labels.shape
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported max value {maxval}")
    return np.frombuffer(parts[4], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)


__all__ = [
    "ConfusionMatrix", "EROSION_MEASURES", "PALETTE", "argmax_map", "colorize", "default_strategy",
    "disk_offsets", "erode_reference", "evaluate", "evaluate_scene", "pool_to_grid", "predict_logits", "predict_map", "read_ppm",
    "reference_for", "scene_inputs", "write_ppm", "write_report",
]
