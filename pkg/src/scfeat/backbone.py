"""Feature-fusion ResUNet backbone (toy-capacity) producing dense descriptor maps.

Topology::

    image -> Enc0 (H/4) -> Enc1 (H/8) -> Enc2 (H/16) -> Enc3 (H/32)
    Dec0 = UPCONV(CONV([up(Enc3), Enc2]))          -> H/8
    Dec1 = UPCONV(CONV([Dec0, Enc1]))              -> H/4
    Side0 = UPCONV(Enc3), Side1 = UPCONV(Dec1), Side2 = CONV(Dec0)
    D_desc = conv1x1([resize(Side0), resize(Side1), resize(Side2)])   at H/4

Every encoder stage is a strided 3x3 CONV followed by residual blocks.
UP-CONV is bilinear x2 upsampling, then 3x3 conv, GN, ELU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import ConvUnit, GROUPS, init_unit, parse_key_values
from .rng import derive_seed
from .tensor import ShapeError, Tensor, bilinear_resize, concat_channels


class PaddingRequiredError(ShapeError):
    """Input size is not a multiple of the backbone's total stride."""


@dataclass(frozen=True)
class BackboneConfig:
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    decoder_channels: tuple[int, ...] = (64, 32)
    side_channels: int = 32
    fused_channels: int = 128
    strides: tuple[int, ...] = (4, 2, 2, 2)
    blocks_per_stage: int = 2
    groups: int = GROUPS

    def __post_init__(self):
        for name in ("encoder_channels", "decoder_channels", "strides"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.encoder_channels) != 4 or len(self.strides) != 4:
            raise ValueError("backbone needs exactly 4 encoder stages")
        if len(self.decoder_channels) != 2:
            raise ValueError("backbone needs exactly 2 decoders")
        if self.fused_channels < 1 or self.side_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.strides[0] != 4:
            raise ValueError("Encoder_0 must run at quarter resolution (stride 4)")
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be positive")
        for c in (*self.encoder_channels, *self.decoder_channels, self.side_channels):
            if c % self.groups:
                raise ValueError(f"channel count {c} not divisible by {self.groups} GN groups")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.strides))

    @classmethod
    def from_text(cls, text: str) -> "BackboneConfig":
        """Parse ``key=value`` lines; list values are comma separated."""
        kv = parse_key_values(text)
        kwargs = {}
        for key, value in kv.items():
            if key in ("encoder_channels", "decoder_channels", "strides"):
                kwargs[key] = tuple(int(v) for v in value.split(","))
            elif key in ("side_channels", "fused_channels", "blocks_per_stage", "groups"):
                kwargs[key] = int(value)
            else:
                raise ValueError(f"unknown backbone config key {key!r}")
        return cls(**kwargs)

    def to_text(self) -> str:
        return "".join([
            f"encoder_channels={','.join(map(str, self.encoder_channels))}\n",
            f"decoder_channels={','.join(map(str, self.decoder_channels))}\n",
            f"side_channels={self.side_channels}\n",
            f"fused_channels={self.fused_channels}\n",
            f"strides={','.join(map(str, self.strides))}\n",
            f"blocks_per_stage={self.blocks_per_stage}\n",
            f"groups={self.groups}\n",
        ])

    @classmethod
    def load(cls, path) -> "BackboneConfig":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class BackboneWeights:
    units: dict[str, ConvUnit] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ConvUnit:
        return self.units[name]


def layer_specs(cfg: BackboneConfig):
    """(name, in_ch, out_ch, k, stride, norm, act) for every layer, in a fixed order."""
    e, d, s = cfg.encoder_channels, cfg.decoder_channels, cfg.side_channels
    specs = []
    prev = 3
    for i in range(4):
        specs.append((f"enc{i}.down", prev, e[i], 3, cfg.strides[i], "group", "elu"))
        for b in range(cfg.blocks_per_stage):
            specs.append((f"enc{i}.block{b}.conv1", e[i], e[i], 3, 1, "group", "elu"))
            specs.append((f"enc{i}.block{b}.conv2", e[i], e[i], 3, 1, "group", None))
        prev = e[i]
    specs += [
        ("dec0.conv", e[3] + e[2], d[0], 3, 1, "group", "elu"),
        ("dec0.upconv", d[0], d[0], 3, 1, "group", "elu"),
        ("dec1.conv", d[0] + e[1], d[1], 3, 1, "group", "elu"),
        ("dec1.upconv", d[1], d[1], 3, 1, "group", "elu"),
        ("side0.upconv", e[3], s, 3, 1, "group", "elu"),
        ("side1.upconv", d[1], s, 3, 1, "group", "elu"),
        ("side2.conv", d[0], s, 3, 1, "group", "elu"),
        ("fuse", 3 * s, cfg.fused_channels, 1, 1, None, None),
    ]
    return specs


def init_backbone(cfg: BackboneConfig, seed: int) -> BackboneWeights:
    units = {}
    for idx, (name, cin, cout, k, stride, norm, act) in enumerate(layer_specs(cfg)):
        units[name] = init_unit(cin, cout, k, derive_seed(seed, idx), stride=stride,
                                norm=norm, groups=cfg.groups, act=act)
    return BackboneWeights(units)


def upsample2(x: Tensor) -> Tensor:
    return bilinear_resize(x, 2 * x.height, 2 * x.width)


def up_conv(x: Tensor, unit: ConvUnit) -> Tensor:
    return unit(upsample2(x))


def residual_block(x: Tensor, conv1: ConvUnit, conv2: ConvUnit) -> Tensor:
    y = conv2(conv1(x))
    summed = x.array.astype(np.float64) + y.array
    return Tensor(np.where(summed >= 0, summed, np.expm1(np.minimum(summed, 0.0))))


def encoder_forward(image: Tensor, cfg: BackboneConfig, w: BackboneWeights) -> list[Tensor]:
    feats, x = [], image
    for i in range(4):
        x = w[f"enc{i}.down"](x)
        for b in range(cfg.blocks_per_stage):
            x = residual_block(x, w[f"enc{i}.block{b}.conv1"], w[f"enc{i}.block{b}.conv2"])
        feats.append(x)
    return feats


@dataclass(frozen=True)
class BackboneOutput:
    d_desc: Tensor
    f0: Tensor
    sides: tuple[Tensor, Tensor, Tensor]
    stages: tuple[Tensor, ...]


def side_maps(stages, cfg: BackboneConfig, w: BackboneWeights):
    """The three side features, each resized to Enc0's (H/4) resolution."""
    e0, e1, e2, e3 = stages
    dec0 = w["dec0.conv"](concat_channels(bilinear_resize(e3, e2.height, e2.width), e2))
    dec0 = up_conv(dec0, w["dec0.upconv"])
    dec1 = up_conv(w["dec1.conv"](concat_channels(dec0, e1)), w["dec1.upconv"])
    h, wd = e0.height, e0.width
    s0 = bilinear_resize(up_conv(e3, w["side0.upconv"]), h, wd)
    s1 = bilinear_resize(up_conv(dec1, w["side1.upconv"]), h, wd)
    s2 = bilinear_resize(w["side2.conv"](dec0), h, wd)
    return s0, s1, s2


def backbone_forward(image: Tensor, cfg: BackboneConfig, weights: BackboneWeights) -> BackboneOutput:
    if image.channels != 3:
        raise ShapeError(f"backbone expects an RGB image, got {image.channels} channels")
    ts = cfg.total_stride
    if image.height % ts or image.width % ts:
        raise PaddingRequiredError(
            f"image {image.height}x{image.width} must be padded to a multiple of {ts}"
        )
    stages = encoder_forward(image, cfg, weights)
    sides = side_maps(stages, cfg, weights)
    cat = concat_channels(concat_channels(sides[0], sides[1]), sides[2])
    d_desc = weights["fuse"](cat)
    return BackboneOutput(d_desc=d_desc, f0=stages[0], sides=sides, stages=tuple(stages))
