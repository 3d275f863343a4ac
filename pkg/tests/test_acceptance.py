"""Release acceptance suite: one test per criterion, each with a runtime budget.

Every test prints a ``criterion NN PASS|FAIL`` line; the lines are repeated in
the terminal summary.
"""

import subprocess
import sys

import numpy as np

from scfeat import oracles
from scfeat.bridge import CrossNormParams, FusionNormConfig, cross_norm, fusion_normalize, l2_normalize
from scfeat.detector import (DetectorConfig, KeypointSet, cell_distribution, detection_forward, init_head,
                             nms_topk, peakiness_channel, peakiness_local, peakiness_map, sample_keypoints_grid)
from scfeat.epipolar import (CorrespondencePrediction, EpipolarModel, RewardConfig, description_loss,
                             eight_point, estimate_fme, fundamental_error, fundamental_from_pose, keypoint_loss,
                             match_matrix, reward)
from scfeat.fixtures import offset_fixture, synthetic_scene, unambiguous_scene
from scfeat.matching import mma
from scfeat.tensor import Tensor


def max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def test_criterion_01_fusion_equals_l2(acceptance):
    with acceptance(1, "fusion(m=2, k=(0,3)) == L2", budget=1.0) as c:
        d = np.random.default_rng(1).normal(size=(1000, 128))
        err = max_abs(fusion_normalize(d, FusionNormConfig((0.0, 3.0))), l2_normalize(d))
        c.check(err <= 1e-6, f"max err {err:.1e} over 1000 vectors")


def test_criterion_02_eight_point_recovery(acceptance):
    with acceptance(2, "eight-point recovery and noise trend", budget=10.0) as c:
        medians, worst_clean = [], 0.0
        for sigma in (0.0, 0.5, 1.0):
            errs = []
            for seed in range(200):
                scene = synthetic_scene(seed, n_points=8)
                F = fundamental_from_pose(scene.K1, scene.K2, scene.R, scene.t).F
                noise = np.random.default_rng(10_000 + seed).normal(size=(2, 8, 2))
                F_hat = eight_point(scene.pts1 + sigma * noise[0], scene.pts2 + sigma * noise[1])
                F_hat = F_hat / np.linalg.norm(F_hat)
                if sigma == 0.0:
                    worst_clean = max(worst_clean, min(np.linalg.norm(F_hat - F), np.linalg.norm(F_hat + F)))
                errs.append(fundamental_error(F_hat, F))
            medians.append(float(np.median(errs)))
        c.check(worst_clean <= 1e-6, f"noiseless Frobenius max {worst_clean:.1e}")
        c.check(medians[0] < medians[1] < medians[2],
                "median smooth_l1 " + " < ".join(f"{m:.2e}" for m in medians))


def test_criterion_03_fme_contract(acceptance):
    with acceptance(3, "fundamental-matrix-error estimation", budget=5.0) as c:
        worst, replay_ok, min_ok, mono_ok = 0.0, True, True, True
        for seed in (3, 7, 11):
            scene = unambiguous_scene(synthetic_scene(seed))
            model = fundamental_from_pose(scene.K1, scene.K2, scene.R, scene.t)
            probs = np.full(len(scene.pts1), 0.5)
            q1 = KeypointSet(scene.pts1, np.ones(len(probs)), probs)
            q2 = KeypointSet(scene.pts2, np.ones(len(probs)), probs)
            P_m = match_matrix(model, q1, q2).P_m
            cfg = RewardConfig(n_iter=100, seed=seed)
            res = estimate_fme(model, P_m, q1, q2, cfg)
            again = estimate_fme(model, P_m, q1, q2, cfg)
            worst = max(worst, res.loss)
            min_ok &= res.loss == float(np.min(res.history))
            replay_ok &= res.loss == again.loss and res.history.tobytes() == again.history.tobytes()
            noisy = KeypointSet(scene.pts2 + np.random.default_rng(seed).normal(size=scene.pts2.shape),
                                np.ones(len(probs)), probs)
            losses = [estimate_fme(model, P_m, q1, noisy, RewardConfig(n_iter=n, seed=seed)).loss
                      for n in (1, 2, 5, 10, 25, 50, 100)]
            mono_ok &= all(a >= b for a, b in zip(losses, losses[1:]))
        c.check(worst < 1e-6, f"noiseless L_fme max {worst:.1e}")
        c.check(min_ok, "loss == min(history)")
        c.check(replay_ok, "bit-deterministic per seed")
        c.check(mono_ok, "non-increasing in n_iter")


def test_criterion_04_reward_algebra(acceptance):
    with acceptance(4, "reward(match) - reward(non-match) == 1", budget=1.0) as c:
        rng = np.random.default_rng(4)
        # Beyond L ~ 19, tanh(L) rounds to 1.0 and r(match) to exactly 0.
        losses = np.concatenate([[0.0], rng.exponential(1.0, 499), rng.uniform(0, 15, 500)])
        rm, rn = reward(losses, True), reward(losses, False)
        c.check(np.all(rm - rn == 1.0), "difference exactly 1.0 on 1000 samples")
        c.check(np.all((rm > 0) & (rm <= 1)), f"r(match) in [{rm.min():.3g}, {rm.max():.3g}]")
        c.check(np.all((rn > -1) & (rn <= 0)), f"r(non-match) in [{rn.min():.3g}, {rn.max():.3g}]")


def test_criterion_05_peakiness_oracles(acceptance):
    with acceptance(5, "peakiness vs brute-force loops", budget=5.0) as c:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            shape = (int(rng.integers(1, 17)), int(rng.integers(1, 17)), int(rng.integers(1, 9)))
            y = Tensor(rng.normal(size=shape))
            # Outputs are stored as float32, so the target is the oracle's float32 value.
            eta, zeta, S = (np.float32(v) for v in oracles.peakiness(y.array))
            worst = max(worst, max_abs(peakiness_channel(y).array, eta), max_abs(peakiness_local(y).array, zeta),
                        max_abs(peakiness_map(y).array, S))
        c.check(worst <= 1e-6, f"max err {worst:.1e} over 100 tensors")


def test_criterion_06_detection_staged(acceptance):
    with acceptance(6, "detection head vs staged recomputation", budget=10.0) as c:
        worst, shapes_ok, nonneg = 0.0, True, True
        for seed in range(20):
            rng = np.random.default_rng(600 + seed)
            size = 32 if seed % 2 else 16
            image = Tensor(rng.uniform(size=(size, size, 3)))
            f_cn = Tensor(rng.normal(size=(size // 4, size // 4, 16)))
            f0 = Tensor(rng.normal(size=(size // 4, size // 4, 8)))
            w = init_head(16, 8, seed)
            got = detection_forward(image, f_cn, f0, w)
            want = oracles.detection_staged(image.array, f_cn.array, f0.array, w)["score"]
            worst = max(worst, max_abs(got.array, want))
            shapes_ok &= got.shape == (size, size, 1)
            nonneg &= bool(np.all(got.array >= 0))
        c.check(worst <= 1e-5, f"max err {worst:.1e} over 20 instances")
        c.check(shapes_ok, "score map shape (H, W)")
        c.check(nonneg, "score map >= 0")


def test_criterion_07_nms_oracle(acceptance):
    with acceptance(7, "NMS vs all-pairs suppression", budget=5.0) as c:
        rng = np.random.default_rng(7)
        mismatches = 0
        for _ in range(100):
            s = Tensor(rng.uniform(0, 2, size=(32, 32))).array[:, :, 0]
            beats = oracles.beats_matrix(s)
            for window in (1, 3, 5):
                for threshold in (0.5, 1.0):
                    pts, vals = oracles.nms(s, window, threshold, 32 * 32, beats)
                    got = nms_topk(Tensor(s), DetectorConfig(nms_window=window, score_threshold=threshold,
                                                             top_k=32 * 32))
                    if not (np.array_equal(got.points, pts) and np.array_equal(got.scores, vals)):
                        mismatches += 1
        c.check(mismatches == 0, f"{mismatches} of 600 configurations differ")


def test_criterion_08_cross_norm(acceptance):
    with acceptance(8, "cross-norm invariances and statistics oracle", budget=2.0) as c:
        rng = np.random.default_rng(8)

        def params(c_, beta=True):
            v = [rng.uniform(-1.5, 1.5, c_) for _ in range(6)]
            if not beta:
                v[1] = v[4] = np.zeros(c_)
            return CrossNormParams(*v)

        affine = oracle = 0.0
        const_ok = True
        for _ in range(20):
            x = rng.normal(scale=4.0, size=(6, 6, 8))
            p = params(8)
            a, b = rng.uniform(1, 20), rng.uniform(-50, 50)
            base = cross_norm(Tensor(x), p).array
            affine = max(affine, max_abs(cross_norm(Tensor(a * x + b), p).array, base))
            oracle = max(oracle, max_abs(base, oracles.cross_norm(Tensor(x).array, p)))
            out = cross_norm(Tensor.full(6, 6, 8, float(rng.uniform(-9, 9))), params(8, beta=False)).array
            const_ok &= bool(np.all(out == 0))
        c.check(affine <= 1e-4, f"affine gap {affine:.1e}")
        c.check(const_ok, "constant input -> 0 with beta = 0")
        c.check(oracle <= 1e-6, f"oracle err {oracle:.1e}")


def test_criterion_09_mma_score(acceptance):
    with acceptance(9, "MMAscore arithmetic", budget=1.0) as c:
        pts1, pts2, pairs, H = offset_fixture()
        offset = mma(pts1, pts2, pairs, H).score
        c.check(abs(offset - 7.0 / 14.5) <= 1e-5, f"5.5 px offset score {offset:.5f} (target 7.0/14.5 = 0.48276)")
        ident = mma(pts1, pts1, pairs, H).score
        c.check(ident == 1.0, f"identity score {ident!r}")


def test_criterion_10_loss_oracles(acceptance):
    with acceptance(10, "loss values vs double-sum oracles", budget=2.0) as c:
        rng = np.random.default_rng(10)
        kp_err = desc_err = 0.0
        for n1 in range(1, 17):
            for n2 in range(1, 17):
                p1, p2 = rng.uniform(0.01, 1.0, n1), rng.uniform(0.01, 1.0, n2)
                P_m = rng.random((n1, n2)) < 0.3
                l_fme, lam = float(rng.uniform(0, 3)), float(rng.uniform(0, 1))
                got = keypoint_loss(KeypointSet(np.zeros((n1, 2)), np.ones(n1), p1),
                                    KeypointSet(np.zeros((n2, 2)), np.ones(n2), p2), P_m, l_fme, lam)
                kp_err = max(kp_err, abs(got - oracles.keypoint_loss(p1, p2, P_m, l_fme, lam)))
        for n in range(1, 17):
            for _ in range(8):
                model = EpipolarModel(rng.normal(size=(3, 3)))
                queries = rng.uniform(0, 60, (n, 2))
                ys, vs = rng.uniform(0, 60, (n, 2)), rng.uniform(0.1, 5.0, n)
                ms = rng.random(n) < 0.8
                ms[0] = True
                preds = [CorrespondencePrediction(y, float(v), bool(m)) for y, v, m in zip(ys, vs, ms)]
                want = oracles.description_loss(model.F, queries, ys, vs, ms)
                desc_err = max(desc_err, abs(description_loss(preds, queries, model) - want))
        # Unit-norm F, so the line of integer (row, col) is the row row + col + 1, exactly.
        line_model = EpipolarModel([[0, 0, 0], [0, 0, -0.5], [0.5, 0.5, 0.5]])
        queries = rng.integers(0, 60, (16, 2)).astype(np.float64)
        preds = [CorrespondencePrediction(np.array([r + q + 1.0, col]), float(v), True)
                 for (r, q), col, v in zip(queries, rng.uniform(0, 60, 16), rng.uniform(0.1, 5.0, 16))]
        on_line = description_loss(preds, queries, line_model)
        c.check(kp_err <= 1e-6, f"keypoint_loss err {kp_err:.1e} (256 size pairs)")
        c.check(desc_err <= 1e-6, f"description_loss err {desc_err:.1e} (128 instances)")
        c.check(on_line == 0.0, f"all-on-line L_desc {on_line!r}")


def _cli(*args):
    proc = subprocess.run([sys.executable, "-m", "scfeat.cli", *map(str, args)],
                          capture_output=True, check=False)
    return proc.returncode, proc.stdout


def test_criterion_11_cli_end_to_end(acceptance, tmp_path):
    with acceptance(11, "extract -> match -> eval-mma on the identity pair", budget=30.0) as c:
        fx = tmp_path / "fx"
        assert _cli("gen-fixtures", "--out", fx, "--seed", 5)[0] == 0
        runs = []
        for name in ("run1", "run2"):
            out = tmp_path / name
            out.mkdir()
            for img in ("image1", "image2"):
                code, _ = _cli("extract", "--image", fx / "identity" / f"{img}.ppm", "--weights", fx / "weights",
                               "--out-keypoints", out / f"{img}.kp", "--out-descriptors", out / f"{img}.desc")
                assert code == 0
            assert _cli("match", "--a", out / "image1.desc", "--b", out / "image2.desc",
                        "--out", out / "matches.txt")[0] == 0
            code, report = _cli("eval-mma", "--matches", out / "matches.txt", "--keypoints1", out / "image1.kp",
                                "--keypoints2", out / "image2.kp", "--homography", fx / "identity" / "H.txt",
                                "--out", out / "mma.txt")
            assert code == 0
            runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        score = [ln for ln in report.decode().splitlines() if ln.startswith("MMAscore")]
        c.check(score == ["MMAscore 1.00000"], f"report {score}")
        c.check(runs[0] == runs[1], f"byte-identical reruns over {len(runs[0])} files")


def test_criterion_12_grid_sampling_frequencies(acceptance):
    with acceptance(12, "grid sampling frequencies vs softmax", budget=10.0) as c:
        score = Tensor(np.array([[0.2, 1.5], [0.9, -0.4]]))
        probs = cell_distribution(score.array[:, :, 0].astype(np.float64))
        cfg = DetectorConfig(grid_cell=2)
        n = 10_000
        counts = np.zeros(5)
        for seed in range(n):
            kps = sample_keypoints_grid(score, cfg, seed)
            if len(kps):
                r, col = kps.points[0].astype(int)
                counts[2 * r + col] += 1
            else:
                counts[4] += 1
        freq = counts / n
        sigma = np.sqrt(probs * (1 - probs) / n)
        z = np.abs(freq - probs) / sigma
        c.check(bool(np.all(z <= 3)), "max |z| " + f"{z.max():.2f} over 4 pixels + abstain")
