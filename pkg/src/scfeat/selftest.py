"""Release gate: compare the fast implementations against the loop oracles."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .detector import DetectorConfig, KeypointSet, nms_topk, peakiness_map
from .epipolar import eight_point, fundamental_from_pose, keypoint_loss
from .fixtures import synthetic_scene
from .nn import ConvLayer, conv2d
from .tensor import Tensor, bilinear_resize, grid_sample

ORACLES = ("convolution", "bilinear", "peakiness", "nms", "eight_point", "loss")


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    error: float
    tolerance: float


def _bump(arr: np.ndarray, active: bool) -> np.ndarray:
    # Test-only hook: shift the largest-magnitude fixture value by 1e-2 on the
    # implementation side only.
    arr = np.array(arr, dtype=np.float64)
    if active:
        arr.flat[np.argmax(np.abs(arr))] += 1e-2
    return arr


def _convolution(perturb: bool):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 5, 3))
    kernel = rng.normal(size=(4, 3, 3, 3))
    bias = rng.normal(size=4)
    layer = ConvLayer(kernel, bias, stride=1, padding=1)
    got = conv2d(Tensor(_bump(x, perturb)), layer).array
    want = oracles.conv2d(Tensor(x).array, layer.kernel, layer.bias, 1, 1)
    return float(np.max(np.abs(got - want))), 1e-5


def _bilinear(perturb: bool):
    rng = np.random.default_rng(12)
    x = Tensor(rng.normal(size=(8, 8, 16)))
    pts = rng.uniform(-1, 9, size=(100, 2))
    got = grid_sample(Tensor(_bump(x.array, perturb)), pts)
    want = np.array([oracles.bilinear_point(x.array, r, c) for r, c in pts])
    resized = bilinear_resize(Tensor([[0, 1], [2, 3]]), 4, 4).array
    err = max(float(np.max(np.abs(got - want))),
              float(np.max(np.abs(resized - oracles.bilinear_resize(np.array([[[0.], [1.]], [[2.], [3.]]]), 4, 4)))))
    return err, 1e-6


def _peakiness(perturb: bool):
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(size=(6, 6, 4)))
    got = peakiness_map(Tensor(_bump(x.array, perturb))).array
    _, _, want = oracles.peakiness(x.array)
    return float(np.max(np.abs(got - want))), 1e-6


def _nms(perturb: bool):
    rng = np.random.default_rng(14)
    s = rng.uniform(0, 2, size=(32, 32, 1))
    cfg = DetectorConfig(nms_window=3, score_threshold=0.5, top_k=50)
    got = nms_topk(Tensor(_bump(s, perturb)), cfg)
    pts, vals = oracles.nms(Tensor(s).array[:, :, 0], 3, 0.5, 50)
    if got.points.shape != pts.shape:
        return float("inf"), 0.0
    return float(max(np.max(np.abs(got.points - pts)), np.max(np.abs(got.scores - vals)))), 1e-6


def _eight_point(perturb: bool):
    scene = synthetic_scene(15, 8)
    F = fundamental_from_pose(scene.K1, scene.K2, scene.R, scene.t).F
    F_hat = eight_point(_bump(scene.pts1, perturb), scene.pts2)
    return float(min(np.linalg.norm(F_hat - F), np.linalg.norm(F_hat + F))), 1e-6


def _loss(perturb: bool):
    rng = np.random.default_rng(16)
    p1, p2 = rng.uniform(0.05, 1.0, 6), rng.uniform(0.05, 1.0, 5)
    P_m = rng.random((6, 5)) < 0.3
    q1 = KeypointSet(np.zeros((6, 2)), np.zeros(6), _bump(p1, perturb))
    q2 = KeypointSet(np.zeros((5, 2)), np.zeros(5), p2)
    got = keypoint_loss(q1, q2, P_m, 0.3, 0.1)
    return abs(got - oracles.keypoint_loss(p1, p2, P_m, 0.3, 0.1)), 1e-6


_RUNNERS = {"convolution": _convolution, "bilinear": _bilinear, "peakiness": _peakiness,
            "nms": _nms, "eight_point": _eight_point, "loss": _loss}


def run_selftest(perturb: str | None = None) -> list[OracleResult]:
    if perturb is not None and perturb not in _RUNNERS:
        raise ValueError(f"unknown oracle {perturb!r}")
    results = []
    for name in ORACLES:
        err, tol = _RUNNERS[name](name == perturb)
        results.append(OracleResult(name, bool(err <= tol), err, tol))
    return results


def timed_selftest(perturb: str | None = None):
    start = time.perf_counter()
    results = run_selftest(perturb)
    return results, time.perf_counter() - start
