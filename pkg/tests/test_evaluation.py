import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from terracer.evaluation import (
    ConfusionMatrix,
    argmax_map,
    disk_offsets,
    erode_reference,
    evaluate,
    predict_logits,
    predict_map,
    read_ppm,
    write_ppm,
)
from terracer.models import build_model, preset
from terracer.raster import NO_DATA, generic_table, synthesize_dataset

from oracles import erosion_naive

label_maps = arrays(np.int64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(0, 3))


@settings(max_examples=60, deadline=None)
@given(label_maps, st.sampled_from([0, 150, 200, 300, 450, 700]), st.sampled_from(["center", "boundary"]))
def test_erosion_matches_all_pairs_oracle(labels, radius, measure):
    fast = erode_reference(labels, radius, 300, measure)
    assert np.array_equal(fast, erosion_naive(labels, radius, 300, measure))


def test_200m_boundary_erosion_excludes_four_neighbours_only():
    assert sorted(disk_offsets(200 / 300, "boundary")) == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    assert disk_offsets(200 / 300, "center") == []


def test_no_data_counts_as_a_different_label():
    labels = np.zeros((3, 3), dtype=np.uint16)
    labels[1, 1] = NO_DATA
    mask = erode_reference(labels, 200, 300)
    assert mask[0, 1] and mask[1, 0] and not mask[0, 0]


@settings(max_examples=30, deadline=None)
@given(label_maps, st.sampled_from(["center", "boundary"]))
def test_exclusion_is_monotone_in_radius(labels, measure):
    masks = [erode_reference(labels, r, 300, measure) for r in (0, 100, 200, 300, 500, 900)]
    for small, large in zip(masks, masks[1:]):
        assert not (small & ~large).any()


@settings(max_examples=30, deadline=None)
@given(label_maps, label_maps)
def test_radius_zero_is_plain_accuracy(reference, prediction):
    prediction = np.resize(prediction, reference.shape)
    mask = erode_reference(reference, 0, 300)
    assert not mask.any()
    cm = ConfusionMatrix.from_maps(reference, prediction, 4, mask)
    assert cm.oa() == pytest.approx((reference == prediction).mean())


def test_confusion_matrix_properties():
    rng = np.random.default_rng(0)
    ref = rng.integers(0, 4, (20, 20))
    pred = rng.integers(0, 4, (20, 20))
    cm = ConfusionMatrix.from_maps(ref, pred, 4, class_table=generic_table(4))
    assert cm.counts.sum() == 400
    assert np.array_equal(cm.support(), np.bincount(ref.ravel(), minlength=4))
    assert ConfusionMatrix.from_maps(ref, ref, 4).oa() == 1.0
    merged = cm + cm
    assert merged.oa() == cm.oa() and merged.total == 800
    (i, j, c), *_ = cm.most_confused(1)
    assert i != j and c == max(cm.counts[a, b] for a in range(4) for b in range(4) if a != b)
    report = cm.to_dict()
    assert report["oa"] == cm.oa() and len(report["per_class"]) == 4
    with pytest.raises(ValueError):
        ConfusionMatrix.from_maps(ref, pred[:5], 4)


def test_random_predictions_have_binomial_accuracy():
    rng = np.random.default_rng(42)
    ref = rng.integers(0, 5, 20000)
    pred = rng.integers(0, 5, 20000)
    hits = int(ConfusionMatrix.from_maps(ref, pred, 5).counts.trace())
    assert stats.binomtest(hits, 20000, 0.2).pvalue > 1e-3


def test_argmax_ties_go_to_the_smaller_class():
    logits = np.zeros((3, 2, 2))
    logits[1] = 1.0
    logits[2] = 1.0
    assert argmax_map(logits).tolist() == [[1, 1], [1, 1]]


@pytest.fixture(scope="module")
def small_model():
    return build_model(preset("dn-e23-g12", num_classes=3, growth=4, stem_filters=8), seed=0).eval()


def test_tiled_prediction_matches_whole_scene(small_model):
    bands = np.random.default_rng(0).normal(size=(13, 256, 224)).astype(np.float32)
    whole = predict_logits(small_model, bands)
    # 64 px cores with 48 px halos give 164 px windows, well inside the 256 px scene
    tiled = predict_logits(small_model, bands, tile_px=64, halo_px=48)
    np.testing.assert_allclose(tiled, whole, rtol=1e-4, atol=1e-4)
    assert np.array_equal(argmax_map(tiled), argmax_map(whole))


def test_prediction_pads_awkward_extents(small_model):
    bands = np.random.default_rng(1).normal(size=(13, 37, 50)).astype(np.float32)
    assert predict_map(small_model, bands, "fine").shape == (37, 50)
    assert predict_map(small_model, bands, "coarse", factor=15).shape == (3, 4)


def test_evaluate_report_fields(tmp_path, small_model):
    path = synthesize_dataset(tmp_path, seed=1, scenes=2, size_px=64, num_classes=3)
    cm, report = evaluate(small_model, path, "test", radius_m=200, strategy="coarse")
    assert report["split"] == "test" and report["strategy"] == "coarse"
    assert report["erosion"] == {"radius_m": 200, "grid_resolution_m": 300.0, "measure": "boundary"}
    assert 0.0 <= report["excluded_fraction"] <= 1.0
    assert report["evaluated_pixels"] == cm.total
    _, fine = evaluate(small_model, path, "test", radius_m=0, strategy="fine")
    assert fine["excluded_fraction"] == 0.0 and fine["evaluated_pixels"] == 64 * 64


def test_ppm_round_trip(tmp_path):
    labels = np.array([[0, 1, NO_DATA], [2, 30, 3]], dtype=np.uint16)
    rgb = read_ppm(write_ppm(tmp_path / "p.ppm", labels))
    assert rgb.shape == (2, 3, 3)
    assert rgb[0, 2].tolist() == [40, 40, 40]
    assert rgb[0, 0].tolist() != rgb[0, 1].tolist()
