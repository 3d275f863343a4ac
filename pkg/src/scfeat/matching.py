"""Descriptor sampling at keypoints, mutual nearest-neighbour matching and MMA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import l2_normalize
from .detector import KeypointSet
from .tensor import ShapeError, Tensor, grid_sample

THRESHOLDS = tuple(range(1, 11))


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorSet:
    descriptors: np.ndarray  # (K, C) float32, unit rows
    keypoints: KeypointSet

    def __post_init__(self):
        d = np.asarray(self.descriptors, dtype=np.float32)
        if d.ndim != 2 or d.shape[0] != len(self.keypoints):
            raise ShapeError("one descriptor row per keypoint required")
        object.__setattr__(self, "descriptors", d)

    def __len__(self):
        return self.descriptors.shape[0]


def feature_coords(points, image_size, map_size) -> np.ndarray:
    """Full-resolution (row, col) -> fractional feature-map coordinates.

    Pixel centres are aligned: r -> (r + 0.5) * (h_map / H) - 0.5, which for
    a quarter-resolution map is (r + 0.5) / 4 - 0.5.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    scale = np.array([map_size[0] / image_size[0], map_size[1] / image_size[1]])
    return (p + 0.5) * scale - 0.5


def extract_descriptors(d_desc: Tensor, kps: KeypointSet, image_size) -> DescriptorSet:
    coords = feature_coords(kps.points, image_size, (d_desc.height, d_desc.width))
    sampled = grid_sample(d_desc, coords) if len(kps) else np.zeros((0, d_desc.channels), np.float32)
    return DescriptorSet(l2_normalize(sampled.astype(np.float64)).astype(np.float32), kps)


@dataclass(frozen=True)
class MatchSet:
    pairs: np.ndarray  # (M, 2) int, (index in A, index in B)
    distances: np.ndarray  # (M,)

    def __len__(self):
        return self.pairs.shape[0]


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def _ratios(dist: np.ndarray, nn: np.ndarray) -> np.ndarray:
    # nearest / second nearest per row; a single column has no rival (ratio 0)
    n = dist.shape[0]
    best = dist[np.arange(n), nn]
    if dist.shape[1] < 2:
        return np.zeros(n)
    rest = dist.copy()
    rest[np.arange(n), nn] = np.inf
    second = rest.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(second > 0, best / second, 1.0)
    return ratio


def mutual_nn_match(a: DescriptorSet | np.ndarray, b: DescriptorSet | np.ndarray,
                    ratio: float | None = None) -> MatchSet:
    """Mutual nearest neighbours under Euclidean distance, ties to the smaller index.

    With ``ratio`` set, both the A->B and B->A nearest/second-nearest ratios
    must be strictly below it.
    """
    da = a.descriptors if isinstance(a, DescriptorSet) else np.asarray(a)
    db = b.descriptors if isinstance(b, DescriptorSet) else np.asarray(b)
    if len(da) == 0 or len(db) == 0:
        return MatchSet(np.zeros((0, 2), np.int64), np.zeros(0))
    dist = pairwise_distances(da, db)
    nn_ab = dist.argmin(axis=1)
    nn_ba = dist.argmin(axis=0)
    ids = np.arange(len(da))
    keep = nn_ba[nn_ab] == ids
    if ratio is not None:
        r_ab = _ratios(dist, nn_ab)
        r_ba = _ratios(dist.T, nn_ba)
        keep &= (r_ab < ratio) & (r_ba[nn_ab] < ratio)
    pairs = np.column_stack([ids[keep], nn_ab[keep]]).astype(np.int64)
    return MatchSet(pairs, dist[ids[keep], nn_ab[keep]])


def apply_homography(H, points) -> np.ndarray:
    """Map (row, col) points through a 3x3 homography acting on [x, y, 1]."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    xy1 = np.column_stack([p[:, 1], p[:, 0], np.ones(len(p))])
    m = xy1 @ np.asarray(H, dtype=np.float64).reshape(3, 3).T
    return np.column_stack([m[:, 1] / m[:, 2], m[:, 0] / m[:, 2]])


@dataclass(frozen=True)
class MmaReport:
    accuracy: dict[int, float]
    score: float
    n_matches: int

    def format(self) -> str:
        lines = [f"matches {self.n_matches}"]
        lines += [f"MMA@{t} {self.accuracy[t]:.5f}" for t in THRESHOLDS]
        lines.append(f"MMAscore {self.score:.5f}")
        return "\n".join(lines) + "\n"


def mma_weights() -> np.ndarray:
    # (2 - 0.1 t) written as (20 - t) / 10 so that the weights sum exactly.
    return np.array([(20 - t) / 10 for t in THRESHOLDS])


def mma(pts1, pts2, matches, homography) -> MmaReport:
    """Per-threshold matching accuracy and the (2 - 0.1 thr)-weighted MMAscore.

    A match (i, j) is correct at ``thr`` when ||H(pts1[i]) - pts2[j]|| <= thr.
    """
    pairs = matches.pairs if isinstance(matches, MatchSet) else np.asarray(matches).reshape(-1, 2)
    if len(pairs) == 0:
        raise UndefinedMetricError("MMA is undefined without matches")
    H = np.asarray(homography, dtype=np.float64).reshape(3, 3)
    if abs(np.linalg.det(H)) < 1e-12:
        raise ValueError("homography must be invertible")
    p1 = np.asarray(pts1, dtype=np.float64).reshape(-1, 2)[pairs[:, 0]]
    p2 = np.asarray(pts2, dtype=np.float64).reshape(-1, 2)[pairs[:, 1]]
    err = np.linalg.norm(apply_homography(H, p1) - p2, axis=1)
    acc = {t: float(np.mean(err <= t)) for t in THRESHOLDS}
    tenths = [20 - t for t in THRESHOLDS]
    score = float(sum(w * acc[t] for w, t in zip(tenths, THRESHOLDS)) / sum(tenths))
    return MmaReport(acc, score, len(pairs))
