"""Two-view epipolar machinery and the training signals built on it.

Pixel convention: every point argument is (row, col).  Homogeneous image
coordinates are [col, row, 1] = [x, y, 1], so fundamental matrices follow the
usual x2^T F x1 = 0 with x horizontal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detector import KeypointSet
from .rng import derive_seed, sample_without_replacement
from .tensor import Tensor, grid_sample


class GeometryError(ValueError):
    """Invalid camera parameters or a degenerate epipolar configuration."""


class EstimationError(GeometryError):
    """The eight-point system has no unique solution."""


class InsufficientMatchesError(ValueError):
    pass


class UndefinedLossError(ValueError):
    pass


def homogeneous(points) -> np.ndarray:
    """(N, 2) (row, col) -> (N, 3) [x, y, 1]."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.column_stack([p[:, 1], p[:, 0], np.ones(len(p))])


def skew(t) -> np.ndarray:
    tx, ty, tz = np.asarray(t, dtype=np.float64)
    return np.array([[0.0, -tz, ty], [tz, 0.0, -tx], [-ty, tx, 0.0]])


def frobenius_normalize(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    n = np.linalg.norm(m)
    if n == 0:
        raise GeometryError("zero matrix cannot be normalised")
    return m / n


@dataclass(frozen=True)
class EpipolarModel:
    F: np.ndarray
    K1: np.ndarray | None = None
    K2: np.ndarray | None = None
    R: np.ndarray | None = None
    t: np.ndarray | None = None

    def __post_init__(self):
        F = frobenius_normalize(np.asarray(self.F, dtype=np.float64).reshape(3, 3))
        if not np.all(np.isfinite(F)):
            raise GeometryError("F must be finite")
        F.setflags(write=False)
        object.__setattr__(self, "F", F)

    @property
    def T(self) -> "EpipolarModel":
        """Model with the roles of the two images swapped."""
        return EpipolarModel(self.F.T)


def fundamental_from_pose(K1, K2, R, t) -> EpipolarModel:
    """F = K2^-T [t]x R K1^-1 for a camera pair with x2 = R X + t."""
    K1 = np.asarray(K1, dtype=np.float64).reshape(3, 3)
    K2 = np.asarray(K2, dtype=np.float64).reshape(3, 3)
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    for name, K in (("K1", K1), ("K2", K2)):
        if abs(np.linalg.det(K)) < 1e-12 or np.linalg.cond(K) > 1e12:
            raise GeometryError(f"{name} is singular")
    if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0:
        raise GeometryError("R is not a rotation")
    if np.linalg.norm(t) == 0:
        raise GeometryError("zero baseline: the fundamental matrix is undefined")
    F = np.linalg.inv(K2).T @ skew(t) @ R @ np.linalg.inv(K1)
    return EpipolarModel(F, K1=K1, K2=K2, R=R, t=t)


def _line_distance(lines: np.ndarray, pts_h: np.ndarray) -> np.ndarray:
    """|l . p| / ||l[:2]|| for every (line, point) pair -> (n_lines, n_points)."""
    ab = np.hypot(lines[:, 0], lines[:, 1])
    if np.any(ab == 0):
        raise GeometryError("degenerate epipolar line (point at the epipole)")
    return np.abs(lines @ pts_h.T) / ab[:, None]


def epipolar_distance(model: EpipolarModel, x, y, direction: str = "1->2") -> float:
    """Distance from ``y`` to the epipolar line of ``x``.

    ``"1->2"``: x lives in image 1, line F x in image 2.
    ``"2->1"``: x lives in image 2, line F^T x in image 1.
    """
    if direction == "1->2":
        F = model.F
    elif direction == "2->1":
        F = model.F.T
    else:
        raise ValueError(f"unknown direction {direction!r}")
    line = homogeneous(x) @ F.T
    return float(_line_distance(line, homogeneous(y))[0, 0])


def epipolar_distances(model: EpipolarModel, pts1, pts2) -> tuple[np.ndarray, np.ndarray]:
    """E1[i, j] = dist(pts2[j], F x_i) and E2[j, i] = dist(pts1[i], F^T y_j)."""
    h1, h2 = homogeneous(pts1), homogeneous(pts2)
    e1 = _line_distance(h1 @ model.F.T, h2)
    e2 = _line_distance(h2 @ model.F, h1)
    return e1, e2


@dataclass(frozen=True)
class MatchMatrix:
    E1: np.ndarray
    E2: np.ndarray
    P_m: np.ndarray
    eps: float

    def pairs(self) -> np.ndarray:
        """Matched (i, j) index pairs in row-major order."""
        return np.argwhere(self.P_m)


def match_from_distances(e1, e2, eps: float = 2.0) -> MatchMatrix:
    """P_m[i, j] = E1[i, j] < eps and E2[j, i] < eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    e1, e2 = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.T.shape:
        raise ValueError(f"E1 {e1.shape} and E2 {e2.shape} are not transposed shapes")
    return MatchMatrix(e1, e2, (e1 < eps) & (e2.T < eps), float(eps))


def match_matrix(model: EpipolarModel, q1: KeypointSet, q2: KeypointSet, eps: float = 2.0) -> MatchMatrix:
    e1, e2 = epipolar_distances(model, q1.points, q2.points)
    return match_from_distances(e1, e2, eps)


# --- eight-point ------------------------------------------------------------


def hartley_transform(pts_h: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    centroid = pts_h[:, :2].mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts_h[:, :2] - centroid, axis=1))
    if mean_dist < 1e-12:
        raise EstimationError("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def eight_point(pts1, pts2) -> np.ndarray:
    """Normalised eight-point estimate of F (rank 2, unit Frobenius norm)."""
    h1, h2 = homogeneous(pts1), homogeneous(pts2)
    if len(h1) != len(h2):
        raise ValueError("point sets must have equal length")
    if len(h1) < 8:
        raise EstimationError(f"need at least 8 correspondences, got {len(h1)}")
    T1, T2 = hartley_transform(h1), hartley_transform(h2)
    n1, n2 = h1 @ T1.T, h2 @ T2.T
    # Row of the design matrix: kron(x2, x1), so A @ vec(F) = x2^T F x1.
    A = np.einsum("ni,nj->nij", n2, n1).reshape(-1, 9)
    _, sv, vt = np.linalg.svd(A)
    if sv[7] <= 1e-10 * sv[0]:
        raise EstimationError("degenerate configuration: design matrix rank < 8")
    F = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(F)
    F = u @ np.diag([s[0], s[1], 0.0]) @ vt
    return frobenius_normalize(T2.T @ F @ T1)


# --- fundamental-matrix error -----------------------------------------------


def smooth_l1(a, b, beta: float = 1.0) -> float:
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    loss = np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)
    return float(loss.mean())


def fundamental_error(F_hat, F) -> float:
    """smooth-L1 between Frobenius-normalised matrices, with the sign of
    ``F_hat`` chosen to minimise the distance."""
    a, b = frobenius_normalize(F_hat), frobenius_normalize(F)
    return min(smooth_l1(a, b), smooth_l1(-a, b))


@dataclass(frozen=True)
class RewardConfig:
    n_iter: int = 100
    eps: float = 2.0
    lambda_reg: float = 0.1
    seed: int = 0
    strict_sampling: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class FmeResult:
    loss: float
    history: np.ndarray = field(repr=False)
    samples: tuple = field(repr=False, default=())

    def __float__(self):
        return self.loss


def draw_iteration(seed: int, iteration: int, n_pairs: int, strict: bool):
    """Indices into the matched-pair list for one iteration: (for image 1, for image 2)."""
    it_seed = derive_seed(seed, iteration)
    first = sample_without_replacement(it_seed, n_pairs, 8)
    if not strict:
        return first, first
    return first, sample_without_replacement(derive_seed(it_seed, 1), n_pairs, 8)


def estimate_fme(model: EpipolarModel, P_m, q1: KeypointSet, q2: KeypointSet,
                 cfg: RewardConfig = RewardConfig()) -> FmeResult:
    """Minimum over ``n_iter`` random 8-pair resamples of the F estimation error.

    By default each draw takes both endpoints of the same matched pairs.  With
    ``strict_sampling`` the image-1 and image-2 points come from two
    independent index draws.  Iteration k's indices depend only on
    (seed, k), so increasing ``n_iter`` only adds candidates.
    """
    pairs = np.argwhere(np.asarray(P_m, dtype=bool))
    if len(pairs) <= 8:
        raise InsufficientMatchesError(f"need more than 8 matches, got {len(pairs)}")
    history = np.empty(cfg.n_iter)
    samples = []
    for k in range(cfg.n_iter):
        idx1, idx2 = draw_iteration(cfg.seed, k, len(pairs), cfg.strict_sampling)
        x1 = q1.points[pairs[idx1, 0]]
        x2 = q2.points[pairs[idx2, 1]]
        try:
            history[k] = fundamental_error(eight_point(x1, x2), model.F)
        except EstimationError:
            history[k] = np.inf
        samples.append((idx1, idx2))
    if not np.any(np.isfinite(history)):
        raise EstimationError("every resample was degenerate")
    return FmeResult(float(history.min()), history, tuple(samples))


def reward(l_fme, is_match):
    """1 - tanh(L) for matches, -tanh(L) otherwise (scalars or arrays)."""
    l_fme = np.asarray(l_fme, dtype=np.float64)
    if np.any(l_fme < 0):
        raise ValueError("L_fme must be non-negative")
    t = np.tanh(l_fme)
    r = np.where(np.asarray(is_match, dtype=bool), 1.0 - t, -t)
    return float(r) if r.ndim == 0 else r


def keypoint_loss(q1: KeypointSet, q2: KeypointSet, P_m, l_fme: float, lambda_reg: float = 0.1) -> float:
    """Policy-gradient style keypoint objective value (no gradients).

    sum_ij r_ij log(p_i p_j) plus lambda * L_fme * (sum log p_i + sum log p_j),
    divided by |Q1| + |Q2|.
    """
    if q1.probs is None or q2.probs is None:
        raise ValueError("keypoint probabilities are required")
    p1, p2 = q1.probs, q2.probs
    if np.any(p1 <= 0) or np.any(p2 <= 0) or np.any(p1 > 1) or np.any(p2 > 1):
        raise ValueError("keypoint probabilities must lie in (0, 1]")
    log1, log2 = np.log(p1), np.log(p2)
    r = reward(np.full(np.shape(P_m), l_fme), P_m)
    pair_term = np.sum(r * (log1[:, None] + log2[None, :]))
    reg = lambda_reg * l_fme * (log1.sum() + log2.sum())
    return float((pair_term + reg) / (len(p1) + len(p2)))


# --- description loss -------------------------------------------------------


@dataclass(frozen=True)
class CorrespondencePrediction:
    y_hat: np.ndarray  # (row, col)
    variance: float
    mask: bool


def clip_line(line, height: int, width: int):
    """End points (row, col) of the part of a*x + b*y + c = 0 inside the image, or None."""
    a, b, c = line
    pts = []
    x_max, y_max = width - 1.0, height - 1.0
    if abs(b) > 1e-12:
        for x in (0.0, x_max):
            y = -(a * x + c) / b
            if -1e-9 <= y <= y_max + 1e-9:
                pts.append((min(max(y, 0.0), y_max), x))
    if abs(a) > 1e-12:
        for y in (0.0, y_max):
            x = -(b * y + c) / a
            if -1e-9 <= x <= x_max + 1e-9:
                pts.append((y, min(max(x, 0.0), x_max)))
    if not pts:
        return None
    pts = np.array(pts)
    # Farthest pair among the candidate intersections.
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    i, j = np.unravel_index(np.argmax(d), d.shape)
    return pts[i], pts[j]


def _expected_location(locs: np.ndarray, corr: np.ndarray, temperature: float):
    z = corr / temperature
    p = np.exp(z - z.max())
    p /= p.sum()
    mean = p @ locs
    centred = locs - mean
    var = float(np.sum(p * np.sum(centred * centred, axis=1)))
    return mean, var


def predict_correspondence(query, d_q: Tensor, d_r: Tensor, model: EpipolarModel, *,
                           window: int = 16, temperature: float = 0.02) -> CorrespondencePrediction:
    """Line-to-window correspondence search for one query pixel (row, col).

    Stage 1 samples one candidate per pixel of the epipolar line clipped to
    the reference map and takes the softmax-expected location; stage 2
    repeats the softmax over the ``window`` x ``window`` pixel block around
    it.  Correlations are dot products of L2-normalised descriptors divided
    by ``temperature``; ``variance`` is the trace of the positional covariance.
    """
    q = np.asarray(query, dtype=np.float64).reshape(2)
    desc_q = grid_sample(d_q, q[None]).astype(np.float64)[0]
    desc_q /= max(np.linalg.norm(desc_q), 1e-12)
    line = (homogeneous(q) @ model.F.T)[0]
    seg = clip_line(line, d_r.height, d_r.width)
    if seg is None:
        return CorrespondencePrediction(np.array([np.nan, np.nan]), 0.0, False)

    def correlate(locs):
        desc = grid_sample(d_r, locs).astype(np.float64)
        desc /= np.maximum(np.linalg.norm(desc, axis=1, keepdims=True), 1e-12)
        return desc @ desc_q

    start, end = seg
    n = max(2, int(np.ceil(np.linalg.norm(end - start))) + 1)
    line_locs = start + np.linspace(0.0, 1.0, n)[:, None] * (end - start)
    coarse, _ = _expected_location(line_locs, correlate(line_locs), temperature)

    half = window // 2
    r0 = int(np.clip(round(coarse[0]) - half, 0, max(d_r.height - window, 0)))
    c0 = int(np.clip(round(coarse[1]) - half, 0, max(d_r.width - window, 0)))
    rr, cc = np.meshgrid(np.arange(r0, min(r0 + window, d_r.height)),
                         np.arange(c0, min(c0 + window, d_r.width)), indexing="ij")
    win_locs = np.column_stack([rr.ravel(), cc.ravel()]).astype(np.float64)
    y_hat, var = _expected_location(win_locs, correlate(win_locs), temperature)
    return CorrespondencePrediction(y_hat, var, True)


def description_loss(predictions, queries, model: EpipolarModel) -> float:
    """Uncertainty-weighted mean distance of predictions to their epipolar lines.

    Each prediction is weighted by mask / variance; predictions with zero
    variance carry no finite weight and are skipped.
    """
    num = den = 0.0
    for pred, x in zip(predictions, queries):
        if not pred.mask or pred.variance <= 0:
            continue
        wgt = 1.0 / pred.variance
        num += wgt * epipolar_distance(model, x, pred.y_hat, "1->2")
        den += wgt
    if den == 0:
        raise UndefinedLossError("no unmasked prediction with positive variance")
    return num / den
