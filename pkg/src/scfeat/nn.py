"""Forward-only layers: convolution, group/instance norm, activations, seeded
initialisation and the on-disk weight bundle."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import uniform
from .tensor import FormatError, ShapeError, Tensor, read_scft, write_scft

NORM_EPS = 1e-5
PRELU_SLOPE = 0.25
GROUPS = 8


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=np.float32)
        bias = np.asarray(self.bias, dtype=np.float32).reshape(-1)
        if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
            raise ShapeError(f"kernel must be (out, in, k, k), got {kernel.shape}")
        if kernel.shape[2] not in (1, 3):
            raise ShapeError(f"only 1x1 and 3x3 kernels are supported, got {kernel.shape[2]}")
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"bias must have {kernel.shape[0]} entries, got {bias.shape}")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
            raise ValueError("convolution weights must be finite")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        kernel.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "bias", bias)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def size(self) -> int:
        return self.kernel.shape[2]


@dataclass(frozen=True)
class NormLayer:
    """Group normalisation over ``groups`` channel groups, or with
    ``kind="instance"`` one group per channel."""

    gain: np.ndarray
    shift: np.ndarray
    kind: str = "group"
    groups: int = GROUPS
    eps: float = NORM_EPS

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=np.float32).reshape(-1)
        shift = np.asarray(self.shift, dtype=np.float32).reshape(-1)
        if gain.shape != shift.shape:
            raise ShapeError("gain and shift must have the same length")
        if self.kind not in ("group", "instance"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "group" and gain.size % self.groups:
            raise ShapeError(f"{gain.size} channels not divisible into {self.groups} groups")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        gain.setflags(write=False)
        shift.setflags(write=False)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls, channels: int, kind: str = "group", groups: int = GROUPS) -> "NormLayer":
        return cls(np.ones(channels), np.zeros(channels), kind=kind, groups=groups)

    @property
    def channels(self) -> int:
        return self.gain.size


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """Zero-padded cross-correlation, accumulated in float64."""
    if x.channels != layer.in_channels:
        raise ShapeError(f"conv expects {layer.in_channels} input channels, got {x.channels}")
    k, s, p = layer.size, layer.stride, layer.padding
    arr = x.array.astype(np.float64)
    if p:
        arr = np.pad(arr, ((p, p), (p, p), (0, 0)))
    h_out = (arr.shape[0] - k) // s + 1
    w_out = (arr.shape[1] - k) // s + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"input {x.shape} too small for {k}x{k} kernel")
    # windows: (h_out, w_out, C, k, k)
    windows = np.lib.stride_tricks.sliding_window_view(arr, (k, k), axis=(0, 1))
    windows = windows[: (h_out - 1) * s + 1 : s, : (w_out - 1) * s + 1 : s]
    out = np.einsum("hwcij,ocij->hwo", windows, layer.kernel.astype(np.float64), optimize=True)
    out += layer.bias.astype(np.float64)
    return Tensor(out)


def normalize_features(x: Tensor, layer: NormLayer) -> Tensor:
    if x.channels != layer.channels:
        raise ShapeError(f"norm expects {layer.channels} channels, got {x.channels}")
    groups = x.channels if layer.kind == "instance" else layer.groups
    h, w, c = x.shape
    arr = x.array.astype(np.float64).reshape(h * w, groups, c // groups)
    mean = arr.mean(axis=(0, 2), keepdims=True)
    var = ((arr - mean) ** 2).mean(axis=(0, 2), keepdims=True)
    z = ((arr - mean) / np.sqrt(var + layer.eps)).reshape(h, w, c)
    return Tensor(z * layer.gain + layer.shift)


def softplus(v):
    v = np.asarray(v, dtype=np.float64)
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def activate(x: Tensor, kind: str, slope: float = PRELU_SLOPE) -> Tensor:
    """Elementwise ``elu``, ``prelu`` (shared ``slope``) or ``softplus``."""
    v = x.array.astype(np.float64)
    if kind == "elu":
        out = np.where(v >= 0, v, np.expm1(np.minimum(v, 0.0)))
    elif kind == "prelu":
        if not np.isfinite(slope):
            raise ValueError("PReLU slope must be finite")
        out = np.where(v >= 0, v, slope * v)
    elif kind == "softplus":
        out = softplus(v)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return Tensor(out)


def seeded_init(shape, seed: int, fan_in: int | None = None) -> np.ndarray:
    """Uniform weights in [-b, b], b = sqrt(1 / fan_in), from the SplitMix64 stream.

    ``fan_in`` defaults to the product of all but the first dimension.
    """
    shape = tuple(int(s) for s in shape)
    if fan_in is None:
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    bound = np.sqrt(1.0 / fan_in)
    u = uniform(seed, int(np.prod(shape)))
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)


def init_conv(in_ch: int, out_ch: int, k: int, seed: int, stride: int = 1) -> ConvLayer:
    fan_in = in_ch * k * k
    kernel = seeded_init((out_ch, in_ch, k, k), seed, fan_in)
    bias = seeded_init((out_ch,), seed ^ 0x5DEECE66D, fan_in)
    return ConvLayer(kernel, bias, stride=stride, padding=k // 2)


# --- weight bundles ---------------------------------------------------------
#
# A bundle is a directory holding ``manifest.txt`` plus one SCFT file per array.
# Manifest lines are ``key=value``; ``#`` starts a comment.  Arrays appear as
#   tensor.<name>=<file>.scft
#   shape.<name>=<d0>,<d1>,...
# and are stored as SCFT tensors of shape (d0, d1, prod(rest)) for ndim >= 2,
# or (1, 1, d0) for vectors.  Every other key is free-form metadata.


@dataclass
class Bundle:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)


def _to_scft_shape(shape):
    if len(shape) == 1:
        return (1, 1, shape[0])
    return (shape[0], shape[1], int(np.prod(shape[2:])) if len(shape) > 2 else 1)


def save_bundle(directory, bundle: Bundle) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in sorted(bundle.meta.items())]
    for name in sorted(bundle.arrays):
        arr = np.asarray(bundle.arrays[name], dtype=np.float32)
        fname = f"{name}.scft"
        write_scft(directory / fname, Tensor(arr.reshape(_to_scft_shape(arr.shape))))
        lines.append(f"tensor.{name}={fname}")
        lines.append(f"shape.{name}={','.join(str(d) for d in arr.shape)}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def parse_key_values(text: str, source="<text>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_bundle(directory) -> Bundle:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise FormatError(f"{directory}: missing manifest.txt")
    entries = parse_key_values(manifest.read_text(), str(manifest))
    bundle = Bundle()
    for key, value in entries.items():
        if key.startswith("tensor."):
            name = key[len("tensor."):]
            shape_key = f"shape.{name}"
            if shape_key not in entries:
                raise FormatError(f"{manifest}: no {shape_key} entry")
            shape = tuple(int(d) for d in entries[shape_key].split(","))
            t = read_scft(directory / value)
            if t.data.size != int(np.prod(shape)):
                raise FormatError(f"{manifest}: {name} has wrong element count")
            bundle.arrays[name] = np.array(t.data).reshape(shape)
        elif not key.startswith("shape."):
            bundle.meta[key] = value
    return bundle


@dataclass(frozen=True)
class ConvUnit:
    """Convolution, optional normalisation, optional activation, applied in that order."""

    conv: ConvLayer
    norm: NormLayer | None = None
    act: str | None = None
    slope: float = PRELU_SLOPE

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.conv)
        if self.norm is not None:
            y = normalize_features(y, self.norm)
        if self.act is not None:
            y = activate(y, self.act, self.slope)
        return y

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.kernel": self.conv.kernel, f"{prefix}.bias": self.conv.bias}
        if self.norm is not None:
            out[f"{prefix}.gain"] = self.norm.gain
            out[f"{prefix}.shift"] = self.norm.shift
        return out

    def to_meta(self, prefix: str) -> dict[str, str]:
        meta = {f"{prefix}.stride": str(self.conv.stride), f"{prefix}.padding": str(self.conv.padding),
                f"{prefix}.act": self.act or "none"}
        if self.norm is not None:
            meta[f"{prefix}.norm"] = self.norm.kind
            meta[f"{prefix}.groups"] = str(self.norm.groups)
            meta[f"{prefix}.eps"] = repr(self.norm.eps)
        if self.act == "prelu":
            meta[f"{prefix}.slope"] = repr(self.slope)
        return meta

    @classmethod
    def from_bundle(cls, bundle: Bundle, prefix: str) -> "ConvUnit":
        try:
            meta = bundle.meta
            conv = ConvLayer(bundle.arrays[f"{prefix}.kernel"], bundle.arrays[f"{prefix}.bias"],
                             stride=int(meta[f"{prefix}.stride"]), padding=int(meta[f"{prefix}.padding"]))
            norm = None
            if f"{prefix}.norm" in meta:
                norm = NormLayer(bundle.arrays[f"{prefix}.gain"], bundle.arrays[f"{prefix}.shift"],
                                 kind=meta[f"{prefix}.norm"], groups=int(meta[f"{prefix}.groups"]),
                                 eps=float(meta[f"{prefix}.eps"]))
            act = meta[f"{prefix}.act"]
            slope = float(meta.get(f"{prefix}.slope", PRELU_SLOPE))
        except KeyError as exc:
            raise FormatError(f"weight bundle is missing {exc.args[0]}") from None
        return cls(conv, norm, None if act == "none" else act, slope)


def init_unit(in_ch: int, out_ch: int, k: int, seed: int, *, stride: int = 1,
              norm: str | None = "group", groups: int = GROUPS, act: str | None = "elu") -> ConvUnit:
    layer = None
    if norm is not None:
        layer = NormLayer.identity(out_ch, kind=norm, groups=groups)
    return ConvUnit(init_conv(in_ch, out_ch, k, seed, stride=stride), layer, act)
