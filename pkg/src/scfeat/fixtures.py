"""Seeded synthetic fixtures: two-view scenes, matching fixtures, toy weights."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector import KeypointSet
from .epipolar import epipolar_distances, fundamental_from_pose
from .formats import write_keypoints, write_matches, write_matrix, write_pose
from .matching import MatchSet
from .pipeline import save_model, textured_image, toy_model
from .tensor import Tensor, write_ppm, write_scft

IMAGE_SIZE = (480, 640)


def rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def intrinsics(focal: float, height: int = IMAGE_SIZE[0], width: int = IMAGE_SIZE[1]) -> np.ndarray:
    return np.array([[focal, 0.0, width / 2], [0.0, focal, height / 2], [0.0, 0.0, 1.0]])


def project(K, X) -> np.ndarray:
    """(N, 3) camera-frame points -> (N, 2) (row, col) pixels."""
    m = X @ np.asarray(K).T
    return np.column_stack([m[:, 1] / m[:, 2], m[:, 0] / m[:, 2]])


@dataclass(frozen=True)
class SyntheticScene:
    K1: np.ndarray
    K2: np.ndarray
    R: np.ndarray
    t: np.ndarray
    X: np.ndarray
    pts1: np.ndarray
    pts2: np.ndarray


def synthetic_scene(seed: int, n_points: int = 50, max_angle: float = 0.3) -> SyntheticScene:
    """Random camera pair (x2 = R x1 + t) looking at a random point cloud 4-8 units away."""
    rng = np.random.default_rng(seed)
    K1 = intrinsics(rng.uniform(400, 600))
    K2 = intrinsics(rng.uniform(400, 600))
    R = rotation(rng.normal(size=3), rng.uniform(-max_angle, max_angle))
    centre = rng.uniform(-1.0, 1.0, size=3)
    centre *= max(1.0, 0.3 / np.linalg.norm(centre))
    t = -R @ centre
    X = np.column_stack([rng.uniform(-2, 2, n_points), rng.uniform(-1.5, 1.5, n_points),
                         rng.uniform(4, 8, n_points)])
    return SyntheticScene(K1, K2, R, t, X, project(K1, X), project(K2, X @ R.T + t))


def unambiguous_scene(scene: SyntheticScene, eps: float = 2.0) -> SyntheticScene:
    """Drop points until the only epipolar matches within ``eps`` are the
    true pairs i <-> i (worst offender first, lowest index on ties)."""
    model = fundamental_from_pose(scene.K1, scene.K2, scene.R, scene.t)
    keep = np.arange(len(scene.pts1))
    while True:
        e1, e2 = epipolar_distances(model, scene.pts1[keep], scene.pts2[keep])
        spurious = (e1 < eps) & (e2.T < eps)
        np.fill_diagonal(spurious, False)
        counts = spurious.sum(axis=0) + spurious.sum(axis=1)
        if not counts.any():
            break
        keep = np.delete(keep, int(np.argmax(counts)))
    return SyntheticScene(scene.K1, scene.K2, scene.R, scene.t, scene.X[keep],
                          scene.pts1[keep], scene.pts2[keep])


def offset_fixture(n: int = 25, offset: float = 5.5):
    """Keypoints on a grid, the second set shifted ``offset`` px to the right,
    identity homography and the pairing i <-> i."""
    g = np.arange(n)
    pts1 = np.column_stack([10.0 + 8 * (g // 5), 10.0 + 8 * (g % 5)])
    pts2 = pts1 + np.array([0.0, offset])
    pairs = np.column_stack([g, g])
    return pts1, pts2, pairs, np.eye(3)


def write_fixtures(out_dir, seed: int, image_size: int = 64) -> dict[str, Path]:
    out = Path(out_dir)
    paths: dict[str, Path] = {}

    scene_dir = out / "scene"
    scene_dir.mkdir(parents=True, exist_ok=True)
    scene = unambiguous_scene(synthetic_scene(seed))
    n = len(scene.pts1)
    probs = np.full(n, 0.5)
    write_pose(scene_dir / "pose.txt", scene.K1, scene.K2, scene.R, scene.t)
    write_keypoints(scene_dir / "kp1.txt", KeypointSet(scene.pts1, np.ones(n), probs))
    write_keypoints(scene_dir / "kp2.txt", KeypointSet(scene.pts2, np.ones(n), probs))
    write_matrix(scene_dir / "F.txt", fundamental_from_pose(scene.K1, scene.K2, scene.R, scene.t).F)
    paths.update(pose=scene_dir / "pose.txt", fundamental=scene_dir / "F.txt",
                 scene_kp1=scene_dir / "kp1.txt", scene_kp2=scene_dir / "kp2.txt")

    ident = out / "identity"
    ident.mkdir(exist_ok=True)
    image = textured_image(image_size, image_size, seed)
    write_ppm(ident / "image1.ppm", image)
    write_ppm(ident / "image2.ppm", image)
    write_matrix(ident / "H.txt", np.eye(3))
    paths.update(image1=ident / "image1.ppm", image2=ident / "image2.ppm", identity_h=ident / "H.txt")

    off = out / "offset"
    off.mkdir(exist_ok=True)
    p1, p2, pairs, H = offset_fixture()
    write_keypoints(off / "kp1.txt", KeypointSet(p1, np.ones(len(p1))))
    write_keypoints(off / "kp2.txt", KeypointSet(p2, np.ones(len(p2))))
    write_matches(off / "matches.txt", MatchSet(pairs, np.zeros(len(pairs))))
    write_matrix(off / "H.txt", H)
    paths.update(offset_kp1=off / "kp1.txt", offset_kp2=off / "kp2.txt",
                 offset_matches=off / "matches.txt", offset_h=off / "H.txt")

    rng = np.random.default_rng(seed)
    write_scft(out / "random.scft", Tensor(rng.normal(size=(8, 8, 16))))
    paths["tensor"] = out / "random.scft"

    save_model(out / "weights", toy_model(seed))
    paths["weights"] = out / "weights"
    return paths
