import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terracer.raster import (
    NO_DATA,
    ClassTableError,
    LoadError,
    RasterError,
    SceneError,
    band_subset,
    class_signatures,
    count_tiles,
    generic_table,
    globcover_table,
    grid_mean_matrix,
    interpolate_labels,
    load_manifest,
    mode_pool,
    read_erb,
    read_label_map,
    resample_band,
    synthesize_dataset,
    synthesize_scene,
    tile_iterator,
    validate_manifest,
    write_erb,
    write_label_map,
)
from terracer.raster.scene import NINE_BANDS


def test_globcover_table_has_23_contiguous_ids():
    table = globcover_table()
    assert len(table) == 23
    ids = table.code_to_id(np.array([[11, 230], [NO_DATA, 210]]))
    assert ids.tolist() == [[0, 22], [NO_DATA, 20]]
    assert table.id_to_code(ids).tolist() == [[11, 230], [NO_DATA, 210]]
    assert len(globcover_table(clouds=True)) == 24


def test_unknown_label_code_is_reported():
    with pytest.raises(ClassTableError, match="12"):
        globcover_table().code_to_id(np.array([12]))


def test_class_table_dict_round_trip():
    table = generic_table(4, clouds=True)
    assert type(table).from_dict(json.loads(json.dumps(table.to_dict()))) == table
    assert table.cloud_class == 4


@pytest.mark.parametrize("dtype", [np.float32, np.uint16])
def test_erb_round_trip_is_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(3)
    a = (rng.normal(size=(7, 5)) * 1e3).astype(dtype) if dtype == np.float32 else rng.integers(0, 65536, (7, 5)).astype(dtype)
    write_erb(tmp_path / "a.erb1", a)
    back = read_erb(tmp_path / "a.erb1", 7, 5, "f32" if dtype == np.float32 else "u16")
    assert back.tobytes() == a.tobytes()


def test_erb_size_mismatch(tmp_path):
    write_erb(tmp_path / "a.erb1", np.zeros((4, 4), np.float32))
    with pytest.raises(RasterError, match="expected"):
        read_erb(tmp_path / "a.erb1", 4, 5)
    with pytest.raises(RasterError):
        write_erb(tmp_path / "b.erb1", np.array([70000]))


def test_label_map_sidecar(tmp_path):
    labels = np.arange(12, dtype=np.uint16).reshape(3, 4)
    write_label_map(tmp_path / "m.erb1", labels, 300, scene="x")
    back, meta = read_label_map(tmp_path / "m.erb1")
    assert np.array_equal(back, labels) and meta["scene"] == "x" and meta["width"] == 4


def test_resample_band_box_mean_and_identity():
    band = np.arange(36, dtype=np.float32).reshape(6, 6)
    down = resample_band(band, 10, 20)
    assert down.shape == (3, 3)
    assert down[0, 0] == pytest.approx(band[:2, :2].mean())
    assert resample_band(band, 20, 20) is band
    up = resample_band(np.ones((2, 2), np.float32), 60, 20)
    assert up.shape == (6, 6) and np.allclose(up, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))
def test_label_interpolation_and_mode_pool_round_trip(h, w, f):
    labels = np.random.default_rng(h * 31 + w).integers(0, 5, (h, w))
    fine = interpolate_labels(labels, 20 * f, 20)
    assert fine.shape == (h * f, w * f)
    assert np.array_equal(mode_pool(fine, f), labels)


def test_mode_pool_ignores_no_data_and_breaks_ties_low():
    block = np.array([[3, 1], [NO_DATA, NO_DATA]], dtype=np.uint16)
    assert mode_pool(block, 2)[0, 0] == 1
    assert mode_pool(np.full((2, 2), NO_DATA, np.uint16), 2)[0, 0] == NO_DATA


def test_grid_mean_matrix_partial_cells():
    m = grid_mean_matrix(5, 3, offset=2)
    assert m.shape == (3, 5)
    assert np.allclose(m.sum(axis=1), 1.0)
    assert m[0].tolist() == [1.0, 0, 0, 0, 0]


def test_label_interpolation_rejects_fractional_factor():
    with pytest.raises(ValueError):
        interpolate_labels(np.zeros((2, 2)), 300, 70)


@pytest.mark.parametrize("h,w,t,s", [(128, 128, 64, 64), (128, 100, 64, 32), (96, 96, 32, 16), (50, 50, 64, 64)])
def test_tile_count_formula(h, w, t, s):
    scene = synthesize_scene(0, size_px=max(h, w))
    scene.bands = scene.bands[:, :h, :w]
    assert len(list(tile_iterator(scene, t, s))) == count_tiles(h, w, t, s)


def test_tiles_are_shuffled_deterministically():
    scene = synthesize_scene(1, size_px=128)
    a = [(t.row, t.col) for t in tile_iterator(scene, 32, 32, seed=4)]
    b = [(t.row, t.col) for t in tile_iterator(scene, 32, 32, seed=4)]
    assert a == b and sorted(a) == [(t.row, t.col) for t in tile_iterator(scene, 32, 32)]
    with pytest.raises(ValueError):
        next(tile_iterator(scene, 48, 48))


def test_band_subset_keeps_nine_in_order():
    scene = band_subset(synthesize_scene(0, size_px=32), "nine_b1_to_b8a")
    assert scene.band_ids == NINE_BANDS and scene.bands.shape[0] == 9
    with pytest.raises(SceneError):
        band_subset(scene, "rgb")


def test_synthesis_is_deterministic():
    a, b = synthesize_scene(9, size_px=64, cloud_fraction=0.2), synthesize_scene(9, size_px=64, cloud_fraction=0.2)
    assert a.bands.tobytes() == b.bands.tobytes() and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.bands, synthesize_scene(10, size_px=64).bands)


def test_zero_cloud_fraction_has_no_cloud_class():
    scene = synthesize_scene(2, size_px=64)
    assert scene.class_table.cloud_class is None
    cloudy = synthesize_scene(2, size_px=64, cloud_fraction=0.3)
    share = (cloudy.labels == cloudy.class_table.cloud_class).mean()
    assert abs(share - 0.3) < 0.1


def test_class_means_match_signatures():
    """Per-class pixel means recover the signatures within the noise's standard error.

    The noise is spatially smoothed, so the effective sample count is much
    smaller than the pixel count; the tolerance uses the smoothing footprint.
    """
    scene = synthesize_scene(5, size_px=256, num_classes=4)
    sigs = class_signatures(4)
    fine = scene.fine_labels()
    for k in range(4):
        sel = fine == k
        if sel.sum() < 2000:
            continue
        effective = sel.sum() / (4 * np.pi * 1.5**2)
        tol = 5 * 0.03 / np.sqrt(effective)
        assert np.abs(scene.bands[:, sel].mean(axis=1) - sigs[k]).max() < tol


def test_dataset_round_trip_through_manifest(tmp_path):
    path = synthesize_dataset(tmp_path, seed=2, scenes=3, size_px=64, num_classes=3, cloud_fraction=0.1)
    assert validate_manifest(path) == []
    manifest = load_manifest(path)
    assert [e["split"] for e in manifest.entries()] == ["train", "train", "test"]
    scene = manifest.load("s002-001")
    direct = synthesize_scene(2001, size_px=64, num_classes=3, cloud_fraction=0.1, with_cloud_class=True)
    assert scene.bands.tobytes() == direct.bands.tobytes()
    assert np.array_equal(scene.labels, direct.labels)


def test_mixed_resolution_bands_are_brought_to_20m(tmp_path):
    path = synthesize_dataset(tmp_path, seed=0, scenes=2, size_px=60, num_classes=3)
    doc = json.loads(path.read_text())
    entry = doc["scenes"][0]
    scene = load_manifest(path).load(entry["id"])
    b2 = scene.bands[scene.band_ids.index("B2")]
    fine = np.repeat(np.repeat(b2, 2, 0), 2, 1)
    write_erb(tmp_path / "b2_10m.erb1", fine)
    coarse = b2.reshape(20, 3, 20, 3).mean(axis=(1, 3))
    write_erb(tmp_path / "b1_60m.erb1", coarse.astype(np.float32))
    entry["bands"]["B2"] = {"file": "b2_10m.erb1", "resolution_m": 10}
    entry["bands"]["B1"] = {"file": "b1_60m.erb1", "resolution_m": 60}
    path.write_text(json.dumps(doc))
    again = load_manifest(path).load(entry["id"])
    assert again.bands.shape == (13, 60, 60)
    assert np.allclose(again.bands[again.band_ids.index("B2")], b2, atol=1e-6)
    b1 = again.bands[0]
    # cell-centre bilinear: the middle pixel of each 3x3 block sits on a 60 m sample
    assert np.allclose(b1[1::3, 1::3], coarse, atol=1e-6)


def test_validation_reports_problems(tmp_path):
    path = synthesize_dataset(tmp_path, seed=0, scenes=2, size_px=32, num_classes=3)
    (tmp_path / "s000-000_B3.erb1").write_bytes(b"\0" * 10)
    problems = validate_manifest(path)
    assert any("s000-000" in p for p in problems)
    with pytest.raises(LoadError):
        load_manifest(tmp_path / "nope.json")
