import numpy as np
import pytest

from terracer.autodiff import ConfigurationError, Conv2d, Tensor
from terracer.models import (
    COUNTERPARTS,
    PRESETS,
    BuildError,
    DenseBlock,
    DenseNetConfig,
    InputSizeError,
    SegNetConfig,
    build_densenet3d_seg,
    build_densenet_seg,
    build_model,
    build_segnet_multiscale,
    config_from_dict,
    config_to_dict,
    count_parameters,
    decoder_blocks_needed,
    heads_finer_than,
    load_config,
    preset,
    save_config,
    spectral_receptive_field,
)

from gradcheck import check_model, model_case

TABLE_SCALES = {"dn-e23-g12": 3, "dn-e45-g16": 3, "dn-e444-g16": 4, "dn3d-e45-g16": 3, "dn3d-e444-g16": 4, "segnet-13": 5}


def test_single_conv_parameter_formula():
    conv = Conv2d(2, 4, 3, np.random.default_rng(0))
    assert count_parameters(conv) == 3 * 3 * 2 * 4 + 4


def test_dense_block_channel_arithmetic():
    rng = np.random.default_rng(0)
    block = DenseBlock("b", 10, 3, 4, rng)
    assert block.out_channels == 10 + 3 * 4
    full, new = block(Tensor(rng.normal(size=(1, 10, 4, 4))))
    assert full.shape[1] == 22 and new.shape[1] == 12


def test_dense_block_rejects_wrong_input_channels():
    block = DenseBlock("encoder[7]", 10, 2, 4, np.random.default_rng(0))
    with pytest.raises(BuildError, match=r"encoder\[7\]"):
        block(Tensor(np.zeros((1, 9, 4, 4))))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_scale_counts(name):
    assert preset(name).num_scales == TABLE_SCALES[name]


def test_densenet_full_resolution_logits():
    model = build_densenet_seg(preset("dn-e23-g12"))
    out = model(Tensor(np.random.default_rng(0).normal(size=(1, 13, 64, 64))))
    assert out.shape == (1, 23, 64, 64)


def test_densenet3d_shape_and_band_rule():
    cfg = preset("dn3d-e45-g16", num_classes=5)
    model = build_densenet3d_seg(cfg)
    assert model(Tensor(np.zeros((1, 9, 32, 32)))).shape == (1, 5, 32, 32)
    with pytest.raises(ConfigurationError):
        model(Tensor(np.zeros((1, 13, 32, 32))))
    with pytest.raises(BuildError):
        build_densenet3d_seg(preset("dn3d-e45-g16", input_bands=13))


def test_spectral_receptive_field_covers_nine_bands():
    assert spectral_receptive_field(4) == 9


def test_builders_reject_the_wrong_kind():
    with pytest.raises(BuildError):
        build_densenet_seg(preset("dn3d-e45-g16"))
    with pytest.raises(BuildError):
        build_densenet3d_seg(preset("dn-e45-g16"))


def test_densenet_input_divisibility():
    model = build_model(preset("dn-e444-g16", num_classes=3))
    with pytest.raises(InputSizeError):
        model(Tensor(np.zeros((1, 13, 20, 20))))


def test_segnet_head_ladder():
    model = build_segnet_multiscale(preset("segnet-13"))
    outs = model(Tensor(np.random.default_rng(0).normal(size=(1, 13, 64, 64))))
    assert [o.shape[-1] for o in outs] == [4, 8, 16, 32, 64]
    assert model.head_strides == (16, 8, 4, 2, 1)
    assert all(o.shape[1] == 23 for o in outs)


def test_segnet_rejects_extents_not_divisible_by_32():
    model = build_segnet_multiscale(SegNetConfig(num_classes=3))
    with pytest.raises(InputSizeError, match="32"):
        model(Tensor(np.zeros((1, 13, 48, 48))))


def test_segnet_head_subset():
    model = build_segnet_multiscale(SegNetConfig(num_classes=3, head_scales=(8, 1)))
    outs = model(Tensor(np.zeros((1, 13, 32, 32))))
    assert [o.shape[-1] for o in outs] == [4, 32]
    with pytest.raises(BuildError):
        SegNetConfig(head_scales=(3,)).validate()


def test_head_selection_resolution_rule():
    assert decoder_blocks_needed(20, 300) == 2
    assert 8 in heads_finer_than((16, 8, 4, 2, 1), 20, 300)
    assert 16 not in heads_finer_than((16, 8, 4, 2, 1), 20, 300)


def test_segnet_parameter_count():
    assert count_parameters(build_model(preset("segnet-13", num_classes=24))) > 27_000_000


@pytest.mark.parametrize("name,target", [("dn-e23-g12", 0.23e6), ("dn-e45-g16", 1.00e6), ("dn-e444-g16", 1.08e6)])
def test_densenet_counts_near_table(name, target):
    n = count_parameters(build_model(preset(name)))
    assert abs(n - target) / target <= 0.2


@pytest.mark.parametrize("name", sorted(COUNTERPARTS))
def test_3d_presets_are_at_least_ten_percent_smaller(name):
    n3 = count_parameters(build_model(preset(name)))
    n2 = count_parameters(build_model(preset(COUNTERPARTS[name])))
    assert n3 < 0.9 * n2


def test_identical_seed_identical_forward():
    x = Tensor(np.random.default_rng(1).normal(size=(1, 13, 32, 32)))
    a = build_model(preset("dn-e23-g12", num_classes=4), seed=7)(x).data
    b = build_model(preset("dn-e23-g12", num_classes=4), seed=7)(x).data
    c = build_model(preset("dn-e23-g12", num_classes=4), seed=8)(x).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_config_round_trip(tmp_path):
    for name in PRESETS:
        cfg = preset(name)
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg
    assert config_from_dict({"preset": "dn-e23-g12", "num_classes": 4}).num_classes == 4
    assert config_to_dict(preset("segnet-13"))["kind"] == "segnet"


def test_config_validation():
    with pytest.raises(BuildError):
        DenseNetConfig((2, 3), 4, (2, 3), 12).validate()
    with pytest.raises(BuildError):
        DenseNetConfig((2, 3), 4, (3, 2), 0).validate()
    with pytest.raises(KeyError, match="dn-e23-g12"):
        preset("resnet-50")
    with pytest.raises(BuildError):
        config_from_dict({"kind": "densenet", "bogus": 1})


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_end_to_end_gradient_spot_check(name):
    model, x, loss = model_case(name, seed=11)
    assert check_model(model, x, loss, n_params=5, seed=11) < 1e-3
