"""Fully convolutional DenseNets, with an optional spectral 3-D first block."""
from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import BatchNorm, Conv2d, Conv3d, Module
from ..autodiff.tensor import DEFAULT_DTYPE, Tensor
from .config import BuildError, DenseNetConfig


class InputSizeError(ops.ConfigurationError):
    pass


class DenseLayer(Module):
    """batchnorm -> relu -> 3x3 (or 3x3x3) convolution producing ``growth`` maps."""

    def __init__(self, in_channels, growth, rng, dims=2, dtype=DEFAULT_DTYPE):
        conv = Conv2d if dims == 2 else Conv3d
        self.norm = BatchNorm(in_channels, dtype=dtype)
        self.conv = conv(in_channels, growth, 3, rng, padding=1, dtype=dtype)

    def forward(self, x):
        return self.conv(ops.relu(self.norm(x)))


class DenseBlock(Module):
    """Each layer sees the block input concatenated with all earlier layer outputs.

    ``forward`` returns the full concatenation (``in + layers * growth``
    channels) and, separately, only the newly produced maps.
    """

    def __init__(self, name, in_channels, n_layers, growth, rng, dims=2, dtype=DEFAULT_DTYPE):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = in_channels + n_layers * growth
        self.layers = [
            DenseLayer(in_channels + i * growth, growth, rng, dims, dtype) for i in range(n_layers)
        ]

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise BuildError(f"{self.name}: expected {self.in_channels} input channels, got {x.shape[1]}")
        features = [x]
        for layer in self.layers:
            features.append(layer(ops.concat_channels(features)))
        out = ops.concat_channels(features)
        if out.shape[1] != self.out_channels:
            raise BuildError(f"{self.name}: produced {out.shape[1]} channels, expected {self.out_channels}")
        return out, ops.concat_channels(features[1:])


class TransitionDown(Module):
    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        self.norm = BatchNorm(channels, dtype=dtype)
        self.conv = Conv2d(channels, channels, 1, rng, dtype=dtype)

    def forward(self, x):
        y, _ = ops.maxpool2d_with_indices(self.conv(ops.relu(self.norm(x))))
        return y


class TransitionUp(Module):
    def __init__(self, channels, rng, dtype=DEFAULT_DTYPE):
        self.conv = Conv2d(channels, channels, 3, rng, padding=1, dtype=dtype)

    def forward(self, x):
        return self.conv(ops.upsample(x, factor=2, mode="nearest"))


class SpectralSqueeze(Module):
    """3-D convolution spanning the whole spectral depth with no spectral padding."""

    def __init__(self, channels, depth, rng, dtype=DEFAULT_DTYPE):
        self.depth = depth
        self.norm = BatchNorm(channels, dtype=dtype)
        self.conv = Conv3d(channels, channels, (depth, 1, 1), rng, padding=0, dtype=dtype)

    def forward(self, x):
        y = self.conv(ops.relu(self.norm(x)))
        n, c, d, h, w = y.shape
        return y.reshape(n, c, h, w)


class DenseNetSeg(Module):
    """Encoder/decoder DenseNet returning full-resolution logits.

    With ``first_block_3d`` the 2-D stem is dropped: bands become the depth
    axis of a one-channel volume, the first dense block uses 3x3x3
    convolutions, and a spectral squeeze hands a 2-D map to the rest.
    """

    def __init__(self, cfg: DenseNetConfig, seed: int = 0, dtype=DEFAULT_DTYPE):
        cfg.validate()
        if cfg.first_block_3d and cfg.input_bands != 9:
            raise BuildError(
                f"3-D DenseNet needs the 9 regularly sampled bands B1-B8a, got input_bands={cfg.input_bands}"
            )
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        g = cfg.growth
        skip_channels = []
        encoder, downs = [], []

        if cfg.first_block_3d:
            self.stem = None
            self.spectral_block = DenseBlock("encoder[0] (3d)", 1, cfg.encoder_blocks[0], g, rng, dims=3, dtype=dtype)
            c = self.spectral_block.out_channels
            self.squeeze = SpectralSqueeze(c, cfg.input_bands, rng, dtype)
            skip_channels.append(c)
            downs.append(TransitionDown(c, rng, dtype))
            remaining = cfg.encoder_blocks[1:]
            first_index = 1
        else:
            self.stem = Conv2d(cfg.input_bands, cfg.stem_filters, 3, rng, padding=1, dtype=dtype)
            c = cfg.stem_filters
            remaining = cfg.encoder_blocks
            first_index = 0

        for i, n_layers in enumerate(remaining, start=first_index):
            block = DenseBlock(f"encoder[{i}]", c, n_layers, g, rng, dtype=dtype)
            encoder.append(block)
            c = block.out_channels
            skip_channels.append(c)
            downs.append(TransitionDown(c, rng, dtype))
        self.encoder = encoder
        self.downs = downs

        self.bottleneck = DenseBlock("bottleneck", c, cfg.bottleneck_layers, g, rng, dtype=dtype)
        up_channels = cfg.bottleneck_layers * g

        ups, decoder = [], []
        for i, (n_layers, skip) in enumerate(zip(cfg.decoder_blocks, reversed(skip_channels))):
            ups.append(TransitionUp(up_channels, rng, dtype))
            block = DenseBlock(f"decoder[{i}]", up_channels + skip, n_layers, g, rng, dtype=dtype)
            decoder.append(block)
            up_channels = n_layers * g
        self.ups = ups
        self.decoder = decoder
        self.classifier = Conv2d(decoder[-1].out_channels, cfg.num_classes, 1, rng, dtype=dtype)

    @property
    def num_scales(self) -> int:
        return self.cfg.num_scales

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise InputSizeError(f"expected (N, bands, H, W) input, got {x.shape}")
        if x.shape[1] != self.cfg.input_bands:
            what = "spectral extent" if self.cfg.first_block_3d else "band count"
            raise ops.ConfigurationError(f"{what} {x.shape[1]} != configured {self.cfg.input_bands}")
        f = self.cfg.downsampling
        if x.shape[2] % f or x.shape[3] % f:
            raise InputSizeError(f"spatial extents {x.shape[2:]} must be divisible by {f}")

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        skips = []
        downs = iter(self.downs)
        if self.cfg.first_block_3d:
            n, b, h, w = x.shape
            vol, _ = self.spectral_block(x.reshape(n, 1, b, h, w))
            x = self.squeeze(vol)
            skips.append(x)
            x = next(downs)(x)
        else:
            x = self.stem(x)
        for block in self.encoder:
            x, _ = block(x)
            skips.append(x)
            x = next(downs)(x)
        _, up = self.bottleneck(x)
        out = None
        for tu, block, skip in zip(self.ups, self.decoder, reversed(skips)):
            out, up = block(ops.concat_channels([tu(up), skip]))
        return self.classifier(out)


def spectral_receptive_field(n_layers: int, kernel_depth: int = 3) -> int:
    """Bands seen by one output of ``n_layers`` stacked stride-1 3-D convolutions."""
    return 1 + (kernel_depth - 1) * n_layers
