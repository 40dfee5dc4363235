"""Multiscale SegNet: VGG-16 encoder, index-unpooling decoder, one label head per scale."""
from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import BatchNorm, Conv2d, Module
from ..autodiff.tensor import DEFAULT_DTYPE, Tensor
from .config import SegNetConfig
from .densenet import InputSizeError


class ConvBNReLU(Module):
    def __init__(self, cin, cout, rng, dtype=DEFAULT_DTYPE):
        self.conv = Conv2d(cin, cout, 3, rng, padding=1, dtype=dtype)
        self.norm = BatchNorm(cout, dtype=dtype)

    def forward(self, x):
        return ops.relu(self.norm(self.conv(x)))


class Stage(Module):
    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        self.convs = [ConvBNReLU(a, b, rng, dtype) for a, b in zip(channels[:-1], channels[1:])]

    def forward(self, x):
        for conv in self.convs:
            x = conv(x)
        return x


def encoder_plan(cfg: SegNetConfig) -> list:
    """Channel sequence of each encoder stage, first stage widened to ``input_bands``."""
    plan, cin = [], cfg.input_bands
    for n_convs, width in zip(cfg.encoder_blocks, cfg.encoder_channels):
        plan.append([cin] + [width] * n_convs)
        cin = width
    return plan


def decoder_plan(cfg: SegNetConfig) -> list:
    """Mirror of the encoder; each stage's last conv narrows to the next shallower width."""
    plan = []
    widths = list(cfg.encoder_channels)
    for depth in reversed(range(len(widths))):
        width = widths[depth]
        target = widths[depth - 1] if depth > 0 else width
        n_convs = cfg.encoder_blocks[depth]
        plan.append([width] * n_convs + [target])
    return plan


class SegNetMultiscale(Module):
    """Returns one logit map per entry of ``cfg.head_scales`` (coarse to fine)."""

    def __init__(self, cfg: SegNetConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = [Stage(ch, rng, dtype) for ch in encoder_plan(cfg)]
        dec = decoder_plan(cfg)
        self.decoder = [Stage(ch, rng, dtype) for ch in dec]
        self.head_strides = tuple(s for s in cfg.strides if s in cfg.head_scales)
        self.heads = [
            Conv2d(ch[-1], cfg.num_classes, 1, rng, dtype=dtype)
            for ch, stride in zip(dec, cfg.strides)
            if stride in cfg.head_scales
        ]

    @property
    def num_scales(self) -> int:
        return self.cfg.num_scales

    def check_input(self, x: Tensor) -> None:
        f = self.cfg.downsampling
        if x.ndim != 4 or x.shape[1] != self.cfg.input_bands:
            raise ops.ConfigurationError(f"expected (N, {self.cfg.input_bands}, H, W) input, got {x.shape}")
        if x.shape[2] % f or x.shape[3] % f:
            raise InputSizeError(
                f"SegNet input extents {x.shape[2:]} cannot survive {len(self.encoder)} halvings; "
                f"use extents divisible by {f}"
            )

    def forward(self, x: Tensor) -> list:
        self.check_input(x)
        pools = []
        for stage in self.encoder:
            x, idx = ops.maxpool2d_with_indices(stage(x))
            pools.append(idx)
        heads = iter(self.heads)
        outputs = []
        for stage, idx, stride in zip(self.decoder, reversed(pools), self.cfg.strides):
            x = stage(ops.max_unpool2d(x, idx))
            if stride in self.cfg.head_scales:
                outputs.append(next(heads)(x))
        return outputs


def decoder_blocks_needed(input_resolution_m: float, label_resolution_m: float, depth: int = 5) -> int:
    """Decoder blocks to add until a head is strictly finer than the labels."""
    for blocks in range(1, depth + 1):
        stride = 2 ** (depth - blocks)
        if stride * input_resolution_m < label_resolution_m:
            return blocks
    return depth


def heads_finer_than(strides, input_resolution_m: float, label_resolution_m: float) -> list:
    return [s for s in strides if s * input_resolution_m < label_resolution_m]
