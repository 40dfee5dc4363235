"""Scenes, manifests, resampling, tiling and the synthetic generator."""
from .classes import (
    CLOUD_CODE,
    GLOBCOVER_LEGEND,
    NO_DATA,
    ClassEntry,
    ClassTable,
    ClassTableError,
    generic_table,
    globcover_table,
)
from .erb import RasterError, read_erb, read_label_map, write_erb, write_label_map
from .manifest import LoadError, Manifest, label_clouds, load_manifest, load_scene, validate_manifest
from .resample import grid_mean_matrix, interpolate_labels, label_factor, mode_pool, resample_band
from .scene import (
    BAND_MODES,
    NINE_BANDS,
    SENTINEL2_BANDS,
    Scene,
    SceneError,
    band_subset,
    compute_normalization,
    normalize_bands,
    select_bands,
)
from .synth import class_signatures, synthesize_dataset, synthesize_scene, write_dataset
from .tiling import Tile, count_tiles, tile_iterator

__all__ = [
    "BAND_MODES", "CLOUD_CODE", "GLOBCOVER_LEGEND", "NINE_BANDS", "NO_DATA", "SENTINEL2_BANDS",
    "ClassEntry", "ClassTable", "ClassTableError", "LoadError", "Manifest", "RasterError", "Scene",
    "SceneError", "Tile", "band_subset", "class_signatures", "compute_normalization", "count_tiles",
    "generic_table", "globcover_table", "grid_mean_matrix", "interpolate_labels", "label_clouds",
    "label_factor", "load_manifest", "load_scene", "mode_pool", "normalize_bands", "read_erb",
    "read_label_map", "resample_band", "select_bands", "synthesize_dataset", "synthesize_scene",
    "tile_iterator", "validate_manifest", "write_dataset", "write_erb", "write_label_map",
]
