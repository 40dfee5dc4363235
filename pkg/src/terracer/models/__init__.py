"""Builders for the six land-cover architectures and their bookkeeping."""
from ..autodiff.nn import Module
from ..autodiff.tensor import DEFAULT_DTYPE
from .config import (
    COUNTERPARTS,
    PRESETS,
    BuildError,
    DenseNetConfig,
    ModelConfig,
    SegNetConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    preset,
    save_config,
)
from .densenet import DenseBlock, DenseNetSeg, InputSizeError, spectral_receptive_field
from .segnet import SegNetMultiscale, decoder_blocks_needed, heads_finer_than


def build_densenet_seg(cfg: DenseNetConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> DenseNetSeg:
    if cfg.first_block_3d:
        raise BuildError("config asks for a 3-D first block; use build_densenet3d_seg")
    return DenseNetSeg(cfg, seed, dtype)


def build_densenet3d_seg(cfg: DenseNetConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> DenseNetSeg:
    if not cfg.first_block_3d:
        raise BuildError("config has first_block_3d=False; use build_densenet_seg")
    return DenseNetSeg(cfg, seed, dtype)


def build_segnet_multiscale(cfg: SegNetConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> SegNetMultiscale:
    return SegNetMultiscale(cfg, seed, dtype)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=DEFAULT_DTYPE) -> Module:
    if isinstance(cfg, SegNetConfig):
        return build_segnet_multiscale(cfg, seed, dtype)
    if cfg.first_block_3d:
        return build_densenet3d_seg(cfg, seed, dtype)
    return build_densenet_seg(cfg, seed, dtype)


def count_parameters(model: Module) -> int:
    """Trainable scalars: conv weights and biases plus batchnorm scale and shift."""
    return sum(p.size for p in model.parameters())


__all__ = [
    "COUNTERPARTS", "PRESETS", "BuildError", "DenseBlock", "DenseNetConfig", "DenseNetSeg",
    "InputSizeError", "ModelConfig", "SegNetConfig", "SegNetMultiscale", "build_densenet3d_seg",
    "build_densenet_seg", "build_model", "build_segnet_multiscale", "config_from_dict",
    "config_to_dict", "count_parameters", "decoder_blocks_needed", "heads_finer_than",
    "load_config", "preset", "save_config", "spectral_receptive_field",
]
