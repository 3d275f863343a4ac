"""Peakiness measurement, the three-layer detection head, NMS / top-K
selection and per-cell probabilistic keypoint sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ConvUnit, init_unit, softplus
from .rng import derive_seed, uniform
from .tensor import ShapeError, Tensor, bilinear_resize, concat_channels, hadamard

ABSTAIN_LOGIT = 1.0


@dataclass(frozen=True)
class DetectorConfig:
    nms_window: int = 1
    score_threshold: float = 1.0
    top_k: int = 8000
    grid_cell: int = 8

    def __post_init__(self):
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ValueError(f"NMS window must be odd and >= 1, got {self.nms_window}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.grid_cell < 1:
            raise ValueError("grid_cell must be >= 1")


# Experiment presets: image matching, localization reference/query, reconstruction.
MATCHING = DetectorConfig(nms_window=1, score_threshold=1.0, top_k=8000)
LOCALIZATION_REFERENCE = DetectorConfig(nms_window=5, score_threshold=1.0, top_k=20000)
LOCALIZATION_QUERY = DetectorConfig(nms_window=3, score_threshold=0.5, top_k=20000)
RECONSTRUCTION = DetectorConfig(nms_window=3, score_threshold=1.0, top_k=20000)
RECONSTRUCTION_RATIO = 0.80


@dataclass(frozen=True)
class KeypointSet:
    """(row, col) pixel locations with scores and optional selection probabilities.

    Detected points are integer valued; synthetic fixtures may be fractional.
    """

    points: np.ndarray
    scores: np.ndarray
    probs: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if scores.size != pts.shape[0]:
            raise ShapeError("one score per keypoint required")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "scores", scores)
        if self.probs is not None:
            probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
            if probs.size != pts.shape[0]:
                raise ShapeError("one probability per keypoint required")
            object.__setattr__(self, "probs", probs)

    def __len__(self):
        return self.points.shape[0]


# --- peakiness --------------------------------------------------------------


def peakiness_channel(y: Tensor) -> Tensor:
    """softplus(y - mean over channels), per pixel and channel."""
    v = y.array.astype(np.float64)
    return Tensor(softplus(v - v.mean(axis=2, keepdims=True)))


def local_mean(v: np.ndarray, window: int = 3) -> np.ndarray:
    """Mean over the window x window neighbourhood, truncated at the borders."""
    r = window // 2
    h, w = v.shape[:2]
    padded = np.pad(v, ((r, r), (r, r), (0, 0)))
    ones = np.pad(np.ones((h, w, 1)), ((r, r), (r, r), (0, 0)))
    total = np.zeros_like(v)
    count = np.zeros((h, w, 1))
    for dr in range(window):
        for dc in range(window):
            total += padded[dr:dr + h, dc:dc + w]
            count += ones[dr:dr + h, dc:dc + w]
    return total / count


def peakiness_local(y: Tensor, window: int = 3) -> Tensor:
    """softplus(y - mean of the same channel over the local window)."""
    v = y.array.astype(np.float64)
    return Tensor(softplus(v - local_mean(v, window)))


def peakiness_map(y: Tensor, window: int = 3) -> Tensor:
    """max over channels of local peakiness times channel peakiness; H x W x 1."""
    v = y.array.astype(np.float64)
    eta = softplus(v - v.mean(axis=2, keepdims=True))
    zeta = softplus(v - local_mean(v, window))
    return Tensor((zeta * eta).max(axis=2, keepdims=True))


# --- detection head ---------------------------------------------------------


@dataclass(frozen=True)
class DetectionHeadWeights:
    layer0_left: ConvUnit
    layer0_right: ConvUnit
    layer1: ConvUnit
    layer2: ConvUnit

    def __post_init__(self):
        if self.layer2.conv.out_channels != 1:
            raise ShapeError("the last head layer must produce a single channel")
        if self.layer2.conv.size != 1:
            raise ShapeError("the last head layer is a 1x1 convolution")

    def units(self) -> dict[str, ConvUnit]:
        return {"head.layer0_left": self.layer0_left, "head.layer0_right": self.layer0_right,
                "head.layer1": self.layer1, "head.layer2": self.layer2}


def init_head(desc_channels: int, f0_channels: int, seed: int, hidden: int = 16) -> DetectionHeadWeights:
    return DetectionHeadWeights(
        layer0_left=init_unit(desc_channels + f0_channels, hidden, 3, derive_seed(seed, 0),
                              norm="instance", act="prelu"),
        layer0_right=init_unit(3, hidden, 3, derive_seed(seed, 1), norm="instance", act="prelu"),
        layer1=init_unit(2 * hidden, hidden, 3, derive_seed(seed, 2), norm="instance", act="prelu"),
        layer2=init_unit(hidden, 1, 1, derive_seed(seed, 3), norm="instance", act="softplus"),
    )


def detection_forward(image: Tensor, f_cn: Tensor, f0: Tensor, w: DetectionHeadWeights) -> Tensor:
    """Final H x W x 1 score map from the image and the quarter-resolution maps."""
    h, wd = image.height, image.width
    if image.channels != 3:
        raise ShapeError("detection expects an RGB image")
    if f_cn.shape[:2] != f0.shape[:2] or 4 * f_cn.height != h or 4 * f_cn.width != wd:
        raise ShapeError(
            f"feature maps {f_cn.shape[:2]}/{f0.shape[:2]} do not match image {h}x{wd} / 4"
        )
    joint = concat_channels(f_cn, f0)
    s_l = peakiness_map(joint)
    s_r = peakiness_map(image)
    h0_l = w.layer0_left(hadamard(joint, s_l))
    h0_r = w.layer0_right(hadamard(image, s_r))
    h1 = w.layer1(concat_channels(bilinear_resize(h0_l, h, wd), h0_r))
    h2 = w.layer2(h1)
    return hadamard(hadamard(bilinear_resize(s_l, h, wd), s_r), h2)


# --- keypoint selection -----------------------------------------------------


def nms_topk(score: Tensor, cfg: DetectorConfig) -> KeypointSet:
    """Window maxima above the threshold, best first, at most ``top_k``.

    A pixel survives when it beats every other pixel of its N x N window in
    the order (higher score, then smaller row-major index).  Sorting uses the
    same order, so results are fully deterministic.
    """
    s = score.array[:, :, 0].astype(np.float64)
    h, w = s.shape
    r = cfg.nms_window // 2
    padded = np.pad(s, r, constant_values=-np.inf)
    keep = s >= cfg.score_threshold
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            if dr == 0 and dc == 0:
                continue
            neighbour = padded[r + dr:r + dr + h, r + dc:r + dc + w]
            later = dr > 0 or (dr == 0 and dc > 0)
            keep &= (s >= neighbour) if later else (s > neighbour)
    rows, cols = np.nonzero(keep)
    vals = s[rows, cols]
    order = np.lexsort((rows * w + cols, -vals))[: cfg.top_k]
    return KeypointSet(np.stack([rows[order], cols[order]], axis=1), vals[order])


def cell_distribution(logits: np.ndarray, abstain: float = ABSTAIN_LOGIT) -> np.ndarray:
    """Softmax over the cell's logits with one trailing abstain entry."""
    z = np.append(np.asarray(logits, dtype=np.float64).ravel(), abstain)
    z = np.exp(z - z.max())
    return z / z.sum()


def sample_keypoints_grid(score: Tensor, cfg: DetectorConfig, seed: int,
                          abstain: float = ABSTAIN_LOGIT) -> KeypointSet:
    """At most one keypoint per g x g cell, drawn from the cell's softmax.

    Cells are visited in row-major order (partial cells at the right and
    bottom edges included); cell ``c`` uses the first uniform of the stream
    ``derive_seed(seed, c)``, so each cell's draw is independent of the others.
    """
    s = score.array[:, :, 0].astype(np.float64)
    h, w = s.shape
    g = cfg.grid_cell
    points, scores, probs = [], [], []
    cell = 0
    for r0 in range(0, h, g):
        for c0 in range(0, w, g):
            block = s[r0:r0 + g, c0:c0 + g]
            p = cell_distribution(block, abstain)
            u = uniform(derive_seed(seed, cell), 1)[0]
            choice = min(int(np.searchsorted(np.cumsum(p), u, side="right")), p.size - 1)
            if choice < block.size:
                br, bc = divmod(choice, block.shape[1])
                points.append((r0 + br, c0 + bc))
                scores.append(block[br, bc])
                probs.append(p[choice])
            cell += 1
    return KeypointSet(np.array(points, dtype=np.int64).reshape(-1, 2), scores, probs)
