"""Cross normalisation (the shared coupling bridge) and descriptor normalisers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

CROSS_NORM_EPS = 1e-5
_PARAM_NAMES = ("gamma_s", "beta_s", "w_s", "gamma_c", "beta_c", "w_c")


class FrozenParamsError(RuntimeError):
    pass


class CrossNormParams:
    """Per-channel scale/shift/weight for the spatial and channel branches.

    ``status`` is ``"learnable"`` or ``"frozen"``; frozen parameters reject
    every mutation.  Arrays are exposed read-only.
    """

    def __init__(self, gamma_s, beta_s, w_s, gamma_c, beta_c, w_c,
                 eps: float = CROSS_NORM_EPS, status: str = "learnable"):
        if status not in ("learnable", "frozen"):
            raise ValueError(f"unknown status {status!r}")
        if not eps > 0:
            raise ValueError("eps must be positive")
        values = {}
        for name, v in zip(_PARAM_NAMES, (gamma_s, beta_s, w_s, gamma_c, beta_c, w_c)):
            arr = np.array(v, dtype=np.float32).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            values[name] = arr
        if len({a.size for a in values.values()}) != 1:
            raise ShapeError("all cross-norm parameters need the same channel count")
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "eps", float(eps))
        object.__setattr__(self, "status", status)

    @classmethod
    def initial(cls, channels: int, status: str = "learnable") -> "CrossNormParams":
        ones, zeros, half = np.ones(channels), np.zeros(channels), np.full(channels, 0.5)
        return cls(ones, zeros, half, ones, zeros, half, status=status)

    def __getattr__(self, name):
        values = object.__getattribute__(self, "_values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def __setattr__(self, name, value):
        if self.status == "frozen":
            raise FrozenParamsError("cross-norm parameters are frozen")
        if name not in _PARAM_NAMES:
            raise AttributeError(f"cannot set {name!r}")
        self.update(**{name: value})

    @property
    def channels(self) -> int:
        return self._values["gamma_s"].size

    def update(self, **changes) -> None:
        if self.status == "frozen":
            raise FrozenParamsError("cross-norm parameters are frozen")
        for name, value in changes.items():
            if name not in _PARAM_NAMES:
                raise AttributeError(f"unknown parameter {name!r}")
            arr = np.array(value, dtype=np.float32).reshape(-1)
            if arr.size != self.channels or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be {self.channels} finite values")
            arr.setflags(write=False)
            self._values[name] = arr

    def frozen(self) -> "CrossNormParams":
        return CrossNormParams(**self._values, eps=self.eps, status="frozen")

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self._values)


def cross_norm(d: Tensor, p: CrossNormParams) -> Tensor:
    """(gamma_s * z_spatial + beta_s) * w_s + (gamma_c * z_channel + beta_c) * w_c.

    z_spatial standardises each channel over all pixels, z_channel standardises
    each pixel over its channels.
    """
    if d.channels != p.channels:
        raise ShapeError(f"params cover {p.channels} channels, tensor has {d.channels}")
    x = d.array.astype(np.float64)
    mu_s = x.mean(axis=(0, 1), keepdims=True)
    var_s = ((x - mu_s) ** 2).mean(axis=(0, 1), keepdims=True)
    mu_c = x.mean(axis=2, keepdims=True)
    var_c = ((x - mu_c) ** 2).mean(axis=2, keepdims=True)
    z_s = (x - mu_s) / np.sqrt(var_s + p.eps)
    z_c = (x - mu_c) / np.sqrt(var_c + p.eps)
    g = {k: v.astype(np.float64) for k, v in p.as_dict().items()}
    spatial = (g["gamma_s"] * z_s + g["beta_s"]) * g["w_s"]
    channel = (g["gamma_c"] * z_c + g["beta_c"]) * g["w_c"]
    return Tensor(spatial + channel)


def l2_normalize(d) -> np.ndarray:
    """Unit-L2 rows; all-zero rows stay zero.  Accepts a vector or an (N, C) array."""
    v = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


@dataclass(frozen=True)
class FusionNormConfig:
    k: tuple[float, ...]

    def __post_init__(self):
        if len(self.k) < 1:
            raise ValueError("fusion normalisation needs m >= 1 weights")
        object.__setattr__(self, "k", tuple(float(x) for x in self.k))

    @property
    def m(self) -> int:
        return len(self.k)


def lp_norm(d, p: int) -> np.ndarray:
    v = np.abs(np.asarray(d, dtype=np.float64))
    return np.sum(v ** p, axis=-1, keepdims=True) ** (1.0 / p)


def fusion_normalize(d, cfg: FusionNormConfig) -> np.ndarray:
    """Weighted blend of d / ||d||_p for p = 1..m, scaled by 1 / (1 + 2 + ... + m)."""
    v = np.asarray(d, dtype=np.float64)
    out = np.zeros_like(v)
    for p, k_p in enumerate(cfg.k, start=1):
        norm = lp_norm(v, p)
        out += k_p * v / np.where(norm > 0, norm, 1.0)
    return out / (cfg.m * (cfg.m + 1) / 2)
