"""Declarative architecture descriptions and the shipped presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Union

VGG16_BLOCKS = (2, 2, 3, 3, 3)
VGG16_CHANNELS = (64, 128, 256, 512, 512)
SEGNET_STRIDES = (16, 8, 4, 2, 1)


class BuildError(ValueError):
    """An architecture description that cannot be assembled."""


@dataclass(frozen=True)
class DenseNetConfig:
    encoder_blocks: tuple = (2, 3)
    bottleneck_layers: int = 4
    decoder_blocks: tuple = (3, 2)
    growth: int = 12
    stem_filters: int = 48
    first_block_3d: bool = False
    input_bands: int = 13
    num_classes: int = 23

    kind = "densenet"

    def __post_init__(self):
        object.__setattr__(self, "encoder_blocks", tuple(self.encoder_blocks))
        object.__setattr__(self, "decoder_blocks", tuple(self.decoder_blocks))

    def validate(self) -> "DenseNetConfig":
        if not self.encoder_blocks:
            raise BuildError("at least one encoder block is required")
        if self.decoder_blocks != tuple(reversed(self.encoder_blocks)):
            raise BuildError(
                f"decoder blocks {list(self.decoder_blocks)} must mirror encoder blocks {list(self.encoder_blocks)}"
            )
        if self.growth <= 0 or self.bottleneck_layers <= 0 or min(self.encoder_blocks) <= 0:
            raise BuildError("growth and layer counts must be positive")
        if self.input_bands <= 0 or self.num_classes <= 0:
            raise BuildError("input_bands and num_classes must be positive")
        return self

    @property
    def num_scales(self) -> int:
        return len(self.encoder_blocks) + 1

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.encoder_blocks)


@dataclass(frozen=True)
class SegNetConfig:
    input_bands: int = 13
    num_classes: int = 23
    encoder_blocks: tuple = VGG16_BLOCKS
    encoder_channels: tuple = VGG16_CHANNELS
    head_scales: tuple = SEGNET_STRIDES

    kind = "segnet"

    def __post_init__(self):
        for name in ("encoder_blocks", "encoder_channels", "head_scales"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def validate(self) -> "SegNetConfig":
        if len(self.encoder_blocks) != len(self.encoder_channels):
            raise BuildError("encoder_blocks and encoder_channels differ in length")
        strides = self.strides
        unknown = set(self.head_scales) - set(strides)
        if unknown or not self.head_scales:
            raise BuildError(f"head_scales must be a non-empty subset of {list(strides)}, got {list(self.head_scales)}")
        return self

    @property
    def strides(self) -> tuple:
        depth = len(self.encoder_blocks)
        return tuple(2 ** (depth - 1 - i) for i in range(depth))

    @property
    def num_scales(self) -> int:
        return len(self.encoder_blocks)

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.encoder_blocks)


ModelConfig = Union[DenseNetConfig, SegNetConfig]

PRESETS = {
    "dn-e23-g12": DenseNetConfig((2, 3), 4, (3, 2), 12),
    "dn-e45-g16": DenseNetConfig((4, 5), 7, (5, 4), 16),
    "dn-e444-g16": DenseNetConfig((4, 4, 4), 4, (4, 4, 4), 16),
    "dn3d-e45-g16": DenseNetConfig((4, 5), 7, (5, 4), 16, first_block_3d=True, input_bands=9),
    "dn3d-e444-g16": DenseNetConfig((4, 4, 4), 4, (4, 4, 4), 16, first_block_3d=True, input_bands=9),
    "segnet-13": SegNetConfig(),
}

# 2-D model each 3-D preset replaces.
COUNTERPARTS = {"dn3d-e45-g16": "dn-e45-g16", "dn3d-e444-g16": "dn-e444-g16"}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None}).validate()


def config_to_dict(cfg: ModelConfig) -> dict:
    out = {"kind": cfg.kind}
    for key, value in asdict(cfg).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(doc: dict) -> ModelConfig:
    doc = dict(doc)
    if "preset" in doc:
        name = doc.pop("preset")
        doc.pop("kind", None)
        return preset(name, **doc)
    kind = doc.pop("kind", "densenet")
    cls = {"densenet": DenseNetConfig, "segnet": SegNetConfig}.get(kind)
    if cls is None:
        raise BuildError(f"unknown model kind {kind!r}")
    allowed = {f.name for f in fields(cls)}
    extra = set(doc) - allowed
    if extra:
        raise BuildError(f"unknown {kind} config fields: {sorted(extra)}")
    return cls(**doc).validate()


def load_config(path: Union[str, Path]) -> ModelConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: ModelConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2))
