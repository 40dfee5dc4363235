"""Synthetic multispectral scenes standing in for the Sentinel-2 / GlobCover pairs.

Labels are smoothed Voronoi regions on the 300 m grid. Each class has a
fixed smooth 13-band signature shared by every scene built from the same
``signature_seed``. Optional "mosaic" pairs share almost the same mean
spectrum and differ only by a fine-scale texture, which a purely spectral
classifier cannot resolve.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from .classes import ClassTable, generic_table
from .erb import write_erb
from .resample import interpolate_labels
from .scene import SENTINEL2_BANDS, Scene, compute_normalization

CLOUD_SIGNATURE = np.linspace(0.92, 0.78, len(SENTINEL2_BANDS))


def class_signatures(num_classes: int, n_bands: int = 13, seed: int = 0, min_distance: float = 0.35) -> np.ndarray:
    """Smooth reflectance curves, pairwise at least ``min_distance`` apart (L2)."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, n_bands)
    sigs = []
    attempts = 0
    while len(sigs) < num_classes:
        attempts += 1
        base = rng.uniform(0.05, 0.35)
        slope = rng.uniform(-0.2, 0.4)
        curve = base + slope * t
        for _ in range(2):
            centre, width, height = rng.uniform(0, 1), rng.uniform(0.08, 0.3), rng.uniform(-0.25, 0.45)
            curve = curve + height * np.exp(-0.5 * ((t - centre) / width) ** 2)
        curve = np.clip(curve, 0.02, 0.95)
        if all(np.linalg.norm(curve - s) >= min_distance for s in sigs) or attempts > 10000:
            sigs.append(curve)
    return np.array(sigs)


def _correlated_noise(rng, shape, smoothing: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(shape), smoothing, mode="wrap")
    return field / field.std()


def _voronoi_labels(rng, hl: int, wl: int, num_classes: int, region_cells: float) -> np.ndarray:
    n_sites = max(num_classes, int(round(hl * wl / region_cells)))
    sites = rng.uniform(0, 1, (n_sites, 2)) * (hl, wl)
    site_class = rng.permutation(np.arange(n_sites) % num_classes)
    yy, xx = np.mgrid[0:hl, 0:wl] + 0.5
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    labels = site_class[d2.argmin(axis=-1)]
    # one 3x3 majority pass rounds off isolated cells
    votes = np.stack([ndimage.uniform_filter((labels == k).astype(float), 3, mode="nearest") for k in range(num_classes)])
    best = votes.argmax(axis=0)
    keep = votes.max(axis=0) <= np.take_along_axis(votes, labels[None], axis=0)[0] + 1e-12
    return np.where(keep, labels, best)


def synthesize_scene(
    seed: int,
    size_px: int = 128,
    num_classes: int = 5,
    cloud_fraction: float = 0.0,
    *,
    mosaic_pairs: int = 0,
    noise_sigma: float = 0.03,
    texture_amplitude: float = 0.12,
    signature_seed: int = 0,
    region_cells: float = 10.0,
    resolution_m: float = 20.0,
    label_resolution_m: float = 300.0,
    with_cloud_class=None,
    scene_id=None,
    split: str = "train",
) -> Scene:
    """Deterministic scene of ``size_px`` x ``size_px`` pixels at ``resolution_m``.

    ``num_classes`` counts land classes; a cloud class is appended when
    ``cloud_fraction > 0`` (or ``with_cloud_class`` is set).
    """
    if 2 * mosaic_pairs > num_classes:
        raise ValueError("not enough classes for the requested mosaic pairs")
    if not 0.0 <= cloud_fraction <= 1.0:
        raise ValueError("cloud_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_bands = len(SENTINEL2_BANDS)
    factor = int(round(label_resolution_m / resolution_m))
    hl = wl = math.ceil(size_px / factor)
    clouds = cloud_fraction > 0 if with_cloud_class is None else bool(with_cloud_class)
    table = generic_table(num_classes, clouds=clouds)

    sigs = class_signatures(num_classes, n_bands, signature_seed)
    sig_rng = np.random.default_rng(signature_seed + 1)
    texture_dirs = {}
    for k in range(mosaic_pairs):
        a, b = 2 * k, 2 * k + 1
        offset = sig_rng.standard_normal(n_bands)
        offset /= np.linalg.norm(offset)
        direction = sig_rng.standard_normal(n_bands)
        direction -= direction.dot(offset) * offset
        direction /= np.linalg.norm(direction)
        sigs[b] = sigs[a] + 0.1 * noise_sigma * offset
        texture_dirs[b] = direction

    labels = _voronoi_labels(rng, hl, wl, num_classes, region_cells)
    if cloud_fraction > 0:
        field = ndimage.gaussian_filter(rng.standard_normal((hl, wl)), 1.5)
        n_cloud = int(round(cloud_fraction * hl * wl))
        if n_cloud:
            cut = np.sort(field.ravel())[::-1][n_cloud - 1]
            labels = np.where(field >= cut, table.cloud_class, labels)

    fine = interpolate_labels(labels, label_resolution_m, resolution_m, (size_px, size_px))
    palette = np.vstack([sigs, CLOUD_SIGNATURE[None, :n_bands]]) if clouds else sigs
    bands = palette[fine].transpose(2, 0, 1).copy()
    for b, direction in texture_dirs.items():
        pattern = np.sign(_correlated_noise(rng, (size_px, size_px), 0.8))
        bands += (fine == b) * pattern * texture_amplitude * direction[:, None, None]
    for i in range(n_bands):
        bands[i] += noise_sigma * _correlated_noise(rng, (size_px, size_px), 1.5)

    month = int(rng.integers(5, 11))
    day = int(rng.integers(1, 29))
    return Scene(
        id=scene_id or f"synth-{seed:04d}",
        bands=bands.astype(np.float32),
        band_ids=SENTINEL2_BANDS,
        resolution_m=resolution_m,
        labels=labels.astype(np.uint16),
        label_resolution_m=label_resolution_m,
        class_table=table,
        acquisition_tag=f"2016-{month:02d}-{day:02d}",
        split=split,
    ).check()


def scene_entry(scene: Scene, prefix: str) -> dict:
    h, w = scene.shape
    return {
        "id": scene.id,
        "split": scene.split,
        "resolution_m": scene.resolution_m,
        "width": w,
        "height": h,
        "bands": {b: f"{prefix}_{b}.erb1" for b in scene.band_ids},
        "labels_file": f"{prefix}_labels.erb1",
        "label_resolution_m": scene.label_resolution_m,
        "label_height": int(scene.labels.shape[0]),
        "label_width": int(scene.labels.shape[1]),
        "acquired": scene.acquisition_tag,
    }


def write_scene(scene: Scene, out_dir, prefix=None) -> dict:
    out_dir = Path(out_dir)
    prefix = prefix or scene.id
    entry = scene_entry(scene, prefix)
    for i, b in enumerate(scene.band_ids):
        write_erb(out_dir / entry["bands"][b], scene.bands[i])
    write_erb(out_dir / entry["labels_file"], scene.class_table.id_to_code(scene.labels))
    return entry


def write_dataset(scenes, out_dir, class_table: ClassTable, name: str = "manifest.json") -> Path:
    """Write ERB1 rasters and a manifest; normalization comes from the train split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenes = list(scenes)
    entries = [write_scene(s, out_dir) for s in scenes]
    train = [s for s in scenes if s.split == "train"] or scenes
    doc = {
        "version": 1,
        "class_table": class_table.to_dict(),
        "normalization": compute_normalization(train),
        "scenes": entries,
    }
    path = out_dir / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def synthesize_dataset(
    out_dir,
    seed: int = 0,
    scenes: int = 10,
    size_px: int = 128,
    num_classes: int = 5,
    cloud_fraction: float = 0.0,
    test_fraction: float = 0.3,
    **scene_kwargs,
) -> Path:
    """``scenes`` independent scenes (spatially disjoint by construction), last ones held out."""
    n_test = int(round(scenes * test_fraction))
    if scenes > 1:
        n_test = min(max(n_test, 1), scenes - 1)
    built = []
    for i in range(scenes):
        split = "test" if i >= scenes - n_test else "train"
        built.append(
            synthesize_scene(
                seed * 1000 + i, size_px, num_classes, cloud_fraction,
                with_cloud_class=cloud_fraction > 0, scene_id=f"s{seed:03d}-{i:03d}", split=split,
                **scene_kwargs,
            )
        )
    return write_dataset(built, out_dir, built[0].class_table)
