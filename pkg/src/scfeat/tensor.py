"""Dense H x W x C float32 tensors, resampling, and the SCFT / PPM / PGM file formats.

Layout is row-major with channels fastest: flat index = (i * W + j) * C + k,
which is exactly numpy's C order for an array of shape (H, W, C).

Bilinear convention (shared by ``bilinear_resize`` and ``grid_sample``):
align-corners-false, so destination index d maps to source coordinate
s = (d + 0.5) * (in / out) - 0.5, and every source coordinate is clamped to
[0, size - 1] before interpolation (edge replication, never zero padding).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

SCFT_MAGIC = b"SCFT"
SCFT_VERSION = 1


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class FormatError(ValueError):
    """Raised when a file does not parse under its documented format."""


class Tensor:
    """Immutable H x W x C float32 tensor.

    ``array`` is a read-only (H, W, C) numpy view; ``data`` is the flat buffer.
    """

    __slots__ = ("_array",)

    def __init__(self, array):
        arr = np.array(array, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeError(f"tensor must be H x W x C, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "_array", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @classmethod
    def from_flat(cls, height: int, width: int, channels: int, values) -> "Tensor":
        values = np.asarray(values, dtype=np.float32).ravel()
        if values.size != height * width * channels:
            raise ShapeError(
                f"expected {height * width * channels} values for "
                f"{height}x{width}x{channels}, got {values.size}"
            )
        return cls(values.reshape(height, width, channels))

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "Tensor":
        return cls(np.full((height, width, channels), value, dtype=np.float32))

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def data(self) -> np.ndarray:
        return self._array.reshape(-1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._array.shape

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def channels(self) -> int:
        return self._array.shape[2]

    def channel_slice(self, start: int, stop: int) -> "Tensor":
        return Tensor(self._array[:, :, start:stop])

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._array, other._array)

    def __hash__(self):
        return hash((self.shape, self._array.tobytes()))

    def __repr__(self):
        return f"Tensor(H={self.height}, W={self.width}, C={self.channels})"


def as_array(t) -> np.ndarray:
    return t.array if isinstance(t, Tensor) else np.asarray(t)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s."""
    if a.height != b.height or a.width != b.width:
        raise ShapeError(f"cannot concatenate {a.shape} with {b.shape}")
    return Tensor(np.concatenate([a.array, b.array], axis=2))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product.

    ``b`` may have a single channel, in which case it multiplies every
    channel of ``a``.
    """
    if a.height != b.height or a.width != b.width or b.channels not in (1, a.channels):
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a.array.astype(np.float64) * b.array.astype(np.float64)
    return Tensor(out)


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    d = np.arange(n_out, dtype=np.float64)
    return (d + 0.5) * (n_in / n_out) - 0.5


def _bilinear_gather(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # arr is (H, W, C) float64; rows/cols are broadcastable fractional coordinates.
    h, w = arr.shape[:2]
    r = np.clip(rows, 0.0, h - 1)
    c = np.clip(cols, 0.0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[..., None]
    fc = (c - c0)[..., None]
    top = arr[r0, c0] * (1.0 - fc) + arr[r0, c1] * fc
    bottom = arr[r1, c0] * (1.0 - fc) + arr[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def resize_coords(out_size: int, in_size: int) -> np.ndarray:
    """Source coordinates sampled by ``bilinear_resize`` along one axis."""
    return _source_coords(out_size, in_size)


def bilinear_resize(t: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (t.height, t.width):
        return t
    rows = _source_coords(out_h, t.height)[:, None]
    cols = _source_coords(out_w, t.width)[None, :]
    return Tensor(_bilinear_gather(t.array.astype(np.float64), rows, cols))


def grid_sample(t: Tensor, coords) -> np.ndarray:
    """Bilinearly sample ``t`` at fractional (row, col) pixel coordinates.

    Returns an (N, C) float32 array, one channel vector per coordinate.
    Coordinates outside the image are clamped to the border.
    """
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("grid coordinates must be finite")
    out = _bilinear_gather(t.array.astype(np.float64), pts[:, 0], pts[:, 1])
    return out.astype(np.float32)


# --- file formats -----------------------------------------------------------


def write_scft(path, t: Tensor) -> None:
    header = SCFT_MAGIC + struct.pack("<4I", SCFT_VERSION, t.height, t.width, t.channels)
    Path(path).write_bytes(header + t.array.astype("<f4").tobytes())


def read_scft(path) -> Tensor:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != SCFT_MAGIC:
        raise FormatError(f"{path}: not an SCFT file")
    version, h, w, c = struct.unpack("<4I", raw[4:20])
    if version != SCFT_VERSION:
        raise FormatError(f"{path}: unsupported SCFT version {version}")
    body = raw[20:]
    if len(body) != 4 * h * w * c:
        raise FormatError(f"{path}: expected {4 * h * w * c} payload bytes, got {len(body)}")
    return Tensor(np.frombuffer(body, dtype="<f4").reshape(h, w, c))


def _ppm_tokens(raw: bytes, count: int):
    # Header tokens separated by whitespace; '#' starts a comment line.
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def read_ppm(path) -> Tensor:
    """Binary P6 8-bit PPM -> H x W x 3 tensor with values in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(raw, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: only binary P6 PPM is supported")
    try:
        w, h, maxval = (int(x) for x in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM (maxval 255) is supported")
    pixels = raw[offset:offset + w * h * 3]
    if len(pixels) != w * h * 3:
        raise FormatError(f"{path}: truncated PPM payload")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
    return Tensor(arr.astype(np.float32) / np.float32(255.0))


def write_ppm(path, image: Tensor) -> None:
    if image.channels != 3:
        raise ShapeError("PPM output needs exactly 3 channels")
    arr = np.clip(np.rint(image.array * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{image.width} {image.height}\n255\n".encode()
    Path(path).write_bytes(header + arr.tobytes())


def write_pgm_heatmap(path, score: Tensor) -> None:
    """Min-max scale a single-channel map to an 8-bit P5 PGM."""
    s = score.array[:, :, 0].astype(np.float64)
    lo, hi = float(s.min()), float(s.max())
    scaled = np.zeros_like(s) if hi <= lo else (s - lo) / (hi - lo)
    arr = np.rint(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{score.width} {score.height}\n255\n".encode()
    Path(path).write_bytes(header + arr.tobytes())
