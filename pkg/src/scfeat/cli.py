"""``scfeat`` command line front end.

Exit codes: 0 success, 1 selftest failure, 2 unreadable or ill-formed input,
3 shape error, 4 no matches to evaluate, 5 too few matches for the
fundamental-matrix error (8 or fewer).

Every subcommand accepts ``--config FILE`` (``key=value`` lines, ``include``
allowed); keys are the long option names with ``-`` or ``_``.  Explicit
flags override the file, the file overrides built-in defaults.  Resolved
parameters are echoed to stderr; stdout carries only data and reports.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


from .config import load_config
from .detector import DetectorConfig, MATCHING
from .epipolar import (EpipolarModel, InsufficientMatchesError, RewardConfig, estimate_fme,
                       fundamental_from_pose, keypoint_loss, match_matrix, reward)
from .fixtures import write_fixtures
from .formats import (read_descriptors, read_keypoints, read_matches, read_matrix, read_pose,
                      write_descriptors, write_keypoints, write_match_matrix, write_matches)
from .matching import UndefinedMetricError, mma, mutual_nn_match
from .pipeline import extract_features, load_model, toy_model
from .selftest import timed_selftest
from .tensor import FormatError, ShapeError, read_ppm, write_pgm_heatmap, write_scft

EXIT_OK, EXIT_SELFTEST, EXIT_INPUT, EXIT_SHAPE, EXIT_NO_MATCHES, EXIT_FEW_MATCHES = 0, 1, 2, 3, 4, 5


class InputError(Exception):
    pass


# (dest, type, default); None default with required=True means mandatory.
OPTIONS = {
    "extract": [
        ("image", str, None), ("weights", str, ""), ("seed", int, None),
        ("nms", int, MATCHING.nms_window), ("threshold", float, MATCHING.score_threshold),
        ("top_k", int, MATCHING.top_k), ("out_keypoints", str, None), ("out_descriptors", str, None),
        ("out_scores", str, ""), ("out_heatmap", str, ""), ("binary_keypoints", bool, False),
    ],
    "match": [("a", str, None), ("b", str, None), ("ratio", float, None), ("out", str, "")],
    "eval-mma": [("matches", str, None), ("keypoints1", str, None), ("keypoints2", str, None),
                 ("homography", str, None), ("out", str, "")],
    "fme": [("keypoints1", str, None), ("keypoints2", str, None), ("pose", str, ""),
            ("fundamental", str, ""), ("eps", float, 2.0), ("n_iter", int, 100),
            ("lambda_reg", float, 0.1), ("seed", int, None), ("strict_sampling", bool, False),
            ("history", str, ""), ("match_matrix", str, "")],
    "gen-fixtures": [("out", str, None), ("seed", int, None), ("image_size", int, 64)],
    "selftest": [],
}
OPTIONAL_NONE = {("match", "ratio"), ("extract", "seed")}


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if str(value).lower() in ("1", "true", "yes", "on"):
        return True
    if str(value).lower() in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scfeat", description="Closed-form local feature pipeline tools.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "extract": "detect keypoints and sample descriptors for one PPM image",
        "match": "mutual nearest-neighbour matching of two descriptor files",
        "eval-mma": "MMA@1..10 and MMAscore against a homography",
        "fme": "fundamental-matrix error, rewards and keypoint loss",
        "gen-fixtures": "write the seeded synthetic fixtures",
        "selftest": "run the built-in oracle checks",
    }
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", default=None)
        for dest, typ, _ in opts:
            flag = "--" + dest.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=dest, action="store_const", const=True, default=None)
            else:
                p.add_argument(flag, dest=dest, type=typ, default=None)
        if name == "selftest":
            p.add_argument("--perturb", default=None, help=argparse.SUPPRESS)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    config = load_config(args.config) if args.config else {}
    known = {dest for dest, _, _ in OPTIONS[command]}
    unknown = set(config) - known
    if unknown:
        raise InputError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    values = {}
    for dest, typ, default in OPTIONS[command]:
        value = getattr(args, dest)
        if value is None and dest in config:
            try:
                value = _parse_bool(config[dest]) if typ is bool else typ(config[dest])
            except ValueError:
                raise InputError(f"config key {dest}: bad value {config[dest]!r}") from None
        if value is None:
            value = default
        if value is None and (command, dest) not in OPTIONAL_NONE:
            raise InputError(f"{command}: --{dest.replace('_', '-')} is required")
        values[dest] = value
    for dest in sorted(values):
        print(f"# {command}.{dest}={values[dest]}", file=sys.stderr)
    return values


def _read(fn, path):
    try:
        return fn(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def cmd_extract(v: dict) -> int:
    image = _read(read_ppm, v["image"])
    if v["weights"]:
        model = _read(load_model, v["weights"])
    elif v["seed"] is not None:
        model = toy_model(v["seed"])
    else:
        raise InputError("extract: pass --weights or --seed for toy weights")
    det = DetectorConfig(nms_window=v["nms"], score_threshold=v["threshold"], top_k=v["top_k"])
    feats = extract_features(image, model, det)
    write_keypoints(v["out_keypoints"], feats.keypoints, binary=v["binary_keypoints"])
    write_descriptors(v["out_descriptors"], feats.descriptors.descriptors)
    if v["out_scores"]:
        write_scft(v["out_scores"], feats.score_map)
    if v["out_heatmap"]:
        write_pgm_heatmap(v["out_heatmap"], feats.score_map)
    print(f"keypoints {len(feats.keypoints)}")
    return EXIT_OK


def cmd_match(v: dict) -> int:
    a = _read(read_descriptors, v["a"])
    b = _read(read_descriptors, v["b"])
    if len(a) == 0 or len(b) == 0:
        raise InputError("match: empty descriptor file")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"descriptor lengths differ: {a.shape[1]} vs {b.shape[1]}")
    matches = mutual_nn_match(a, b, v["ratio"])
    if v["out"]:
        write_matches(v["out"], matches)
    else:
        for (i, j), d in zip(matches.pairs, matches.distances):
            print(f"{i} {j} {format(float(d), '.17g')}")
    return EXIT_OK


def cmd_eval_mma(v: dict) -> int:
    pairs = _read(read_matches, v["matches"])
    kp1 = _read(read_keypoints, v["keypoints1"])
    kp2 = _read(read_keypoints, v["keypoints2"])
    H = _read(read_matrix, v["homography"])
    if len(pairs) and (pairs[:, 0].max() >= len(kp1) or pairs[:, 1].max() >= len(kp2) or pairs.min() < 0):
        raise InputError("eval-mma: match index outside the keypoint files")
    report = mma(kp1.points, kp2.points, pairs, H)
    text = report.format()
    if v["out"]:
        Path(v["out"]).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_fme(v: dict) -> int:
    q1 = _read(read_keypoints, v["keypoints1"])
    q2 = _read(read_keypoints, v["keypoints2"])
    if v["pose"]:
        pose = _read(read_pose, v["pose"])
        model = fundamental_from_pose(pose["K1"], pose["K2"], pose["R"], pose["t"])
    elif v["fundamental"]:
        model = EpipolarModel(_read(read_matrix, v["fundamental"]))
    else:
        raise InputError("fme: pass --pose or --fundamental")
    if q1.probs is None or q2.probs is None:
        raise InputError("fme: keypoint files need a probability column")
    cfg = RewardConfig(n_iter=v["n_iter"], eps=v["eps"], lambda_reg=v["lambda_reg"], seed=v["seed"],
                       strict_sampling=v["strict_sampling"])
    mm = match_matrix(model, q1, q2, cfg.eps)
    if v["match_matrix"]:
        write_match_matrix(v["match_matrix"], mm.P_m)
    result = estimate_fme(model, mm.P_m, q1, q2, cfg)
    if v["history"]:
        Path(v["history"]).write_text("".join(f"{k} {format(e, '.17g')}\n" for k, e in enumerate(result.history)))
    l_kp = keypoint_loss(q1, q2, mm.P_m, result.loss, cfg.lambda_reg)
    sys.stdout.write(
        f"matches {int(mm.P_m.sum())}\n"
        f"L_fme {format(result.loss, '.10e')}\n"
        f"reward_match {format(reward(result.loss, True), '.10f')}\n"
        f"reward_nonmatch {format(reward(result.loss, False), '.10f')}\n"
        f"L_kp {format(l_kp, '.10f')}\n"
    )
    return EXIT_OK


def cmd_gen_fixtures(v: dict) -> int:
    paths = write_fixtures(v["out"], v["seed"], v["image_size"])
    for name in sorted(paths):
        print(f"{name} {paths[name]}")
    return EXIT_OK


def cmd_selftest(perturb: str | None) -> int:
    results, elapsed = timed_selftest(perturb)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} error={r.error:.3e} tol={r.tolerance:.0e}")
    failed = [r.name for r in results if not r.passed]
    print(f"elapsed {elapsed:.2f}s")
    if failed:
        print(f"failed oracles: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "match": cmd_match, "eval-mma": cmd_eval_mma, "fme": cmd_fme,
            "gen-fixtures": cmd_gen_fixtures}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args.perturb)
        return COMMANDS[args.command](resolve(args.command, args))
    except ShapeError as exc:
        print(f"scfeat: shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except UndefinedMetricError as exc:
        print(f"scfeat: {exc}", file=sys.stderr)
        return EXIT_NO_MATCHES
    except InsufficientMatchesError as exc:
        print(f"scfeat: {exc}", file=sys.stderr)
        return EXIT_FEW_MATCHES
    except (InputError, FormatError, ValueError, OSError) as exc:
        print(f"scfeat: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
