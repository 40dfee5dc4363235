"""Dataset manifests: JSON index of scenes stored as ERB1 rasters."""
from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .classes import NO_DATA, ClassTable, ClassTableError
from .erb import RasterError, read_erb
from .resample import resample_band
from .scene import SENTINEL2_BANDS, Scene, SceneError

MANIFEST_VERSION = 1
TARGET_RESOLUTION_M = 20.0
# QA60 bits flagging opaque clouds and cirrus.
QA60_CLOUD_BITS = (1 << 10) | (1 << 11)


class LoadError(RuntimeError):
    """A manifest entry that cannot be turned into a valid scene."""


class Manifest:
    def __init__(self, doc: dict, root: Path, path: Optional[Path] = None):
        self.doc = doc
        self.root = root
        self.path = path
        self.version = doc.get("version", MANIFEST_VERSION)
        self.class_table = ClassTable.from_dict(doc["class_table"])
        self.normalization = doc.get("normalization")
        self.scenes = list(doc.get("scenes", []))

    def entries(self, split: Optional[str] = None) -> list:
        return [s for s in self.scenes if split is None or s.get("split") == split]

    def entry(self, scene_id: str) -> dict:
        for s in self.scenes:
            if s["id"] == scene_id:
                return s
        raise LoadError(f"scene {scene_id!r} not in manifest")

    def load(self, entry_or_id) -> Scene:
        entry = self.entry(entry_or_id) if isinstance(entry_or_id, str) else entry_or_id
        return load_scene(entry, self.root, self.class_table)

    def load_split(self, split: str) -> list:
        return [self.load(e) for e in self.entries(split)]

    def save(self, path=None) -> Path:
        path = Path(path or self.path)
        doc = dict(self.doc)
        doc["class_table"] = self.class_table.to_dict()
        doc["normalization"] = self.normalization
        doc["scenes"] = self.scenes
        path.write_text(json.dumps(doc, indent=2))
        return path


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise LoadError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from None
    for key in ("class_table", "scenes"):
        if key not in doc:
            raise LoadError(f"{path}: missing field {key!r}")
    return Manifest(doc, path.parent, path)


def _band_source(name, spec, entry) -> tuple:
    if isinstance(spec, str):
        return spec, float(entry["resolution_m"])
    return spec["file"], float(spec.get("resolution_m", entry["resolution_m"]))


def load_scene(entry: dict, root, class_table: ClassTable) -> Scene:
    """Read one manifest entry and bring every band to 20 m/px.

    Labels stay on their native grid, mapped from codes to contiguous ids.
    """
    root = Path(root)
    sid = entry.get("id", "<unnamed>")
    try:
        res = float(entry["resolution_m"])
        width, height = int(entry["width"]), int(entry["height"])
        label_res = float(entry["label_resolution_m"])
        footprint = (height * res, width * res)
        target = (round(footprint[0] / TARGET_RESOLUTION_M), round(footprint[1] / TARGET_RESOLUTION_M))
        names, stack = [], []
        for name, spec in entry["bands"].items():
            if name not in SENTINEL2_BANDS:
                raise LoadError(f"scene {sid}: unknown band id {name!r}")
            fname, band_res = _band_source(name, spec, entry)
            shape = (round(footprint[0] / band_res), round(footprint[1] / band_res))
            raw = read_erb(root / fname, shape[0], shape[1], "f32")
            stack.append(resample_band(raw, band_res, TARGET_RESOLUTION_M, target))
            names.append(name)
        order = sorted(range(len(names)), key=lambda i: SENTINEL2_BANDS.index(names[i]))
        bands = np.stack([stack[i] for i in order])
        band_ids = tuple(names[i] for i in order)

        lh = int(entry.get("label_height", math.ceil(footprint[0] / label_res)))
        lw = int(entry.get("label_width", math.ceil(footprint[1] / label_res)))
        codes = read_erb(root / entry["labels_file"], lh, lw, "u16")
        labels = class_table.code_to_id(codes)

        cloud_mask = None
        if "qa60_file" in entry:
            qa_res = float(entry.get("qa60_resolution_m", 60.0))
            qa = read_erb(root / entry["qa60_file"], round(footprint[0] / qa_res), round(footprint[1] / qa_res), "u16")
            flags = (qa.astype(np.int64) & QA60_CLOUD_BITS) != 0
            cloud_mask = _nearest_resize(flags, target)
        scene = Scene(
            id=sid, bands=bands, band_ids=band_ids, resolution_m=TARGET_RESOLUTION_M,
            labels=labels, label_resolution_m=label_res, class_table=class_table,
            acquisition_tag=str(entry.get("acquired", "")), cloud_mask=cloud_mask,
            split=entry.get("split", "train"),
        )
        return scene.check()
    except LoadError:
        raise
    except (KeyError, RasterError, SceneError, ClassTableError, ValueError) as exc:
        detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        raise LoadError(f"scene {sid}: {detail}") from exc


def _nearest_resize(mask: np.ndarray, shape) -> np.ndarray:
    rows = np.minimum((np.arange(shape[0]) * mask.shape[0]) // shape[0], mask.shape[0] - 1)
    cols = np.minimum((np.arange(shape[1]) * mask.shape[1]) // shape[1], mask.shape[1] - 1)
    return mask[rows[:, None], cols[None, :]]


def label_clouds(scene: Scene, min_fraction: float = 0.5) -> Scene:
    """Relabel label cells whose pixels are mostly cloud-flagged with the cloud class."""
    if scene.cloud_mask is None or scene.class_table.cloud_class is None:
        return scene
    f = scene.label_factor
    hl, wl = scene.labels.shape
    padded = np.zeros((hl * f, wl * f))
    covered = np.zeros_like(padded)
    h, w = scene.cloud_mask.shape
    padded[:h, :w] = scene.cloud_mask
    covered[:h, :w] = 1
    frac = padded.reshape(hl, f, wl, f).sum(axis=(1, 3)) / np.maximum(covered.reshape(hl, f, wl, f).sum(axis=(1, 3)), 1)
    labels = scene.labels.copy()
    labels[(frac >= min_fraction) & (labels != NO_DATA)] = scene.class_table.cloud_class
    return replace(scene, labels=labels)


def is_cloudy(scene: Scene) -> bool:
    return scene.cloud_mask is not None and bool(scene.cloud_mask.any())


def validate_manifest(path) -> list:
    """Load every scene; returns the list of problems (empty when valid)."""
    problems = []
    try:
        manifest = load_manifest(path)
    except (LoadError, ClassTableError, KeyError) as exc:
        return [str(exc)]
    ids = [s.get("id") for s in manifest.scenes]
    if len(set(ids)) != len(ids):
        problems.append("duplicate scene ids")
    for entry in manifest.scenes:
        if entry.get("split") not in ("train", "test"):
            problems.append(f"scene {entry.get('id')}: split must be 'train' or 'test'")
        try:
            manifest.load(entry)
        except LoadError as exc:
            problems.append(str(exc))
    norm = manifest.normalization
    if norm is not None and not (len(norm.get("bands", [])) == len(norm.get("mean", [])) == len(norm.get("std", []))):
        problems.append("normalization arrays differ in length")
    return problems

