"""Text and binary interchange formats used by the command line tools.

keypoints (text)    one line per point: ``row col score [prob]``
keypoints (binary)  ``SCFK``, u32 version=1, u32 count, u32 has_prob, then per
                    point little-endian f64 row, col, score [, prob]
descriptors         one line per keypoint, C whitespace separated floats
matches             ``i j dist`` per line
match matrix        ``i j 1`` / ``i j 0`` per line, row-major
3x3 matrices        9 floats, row-major, any whitespace
pose                lines ``K1 <9 floats>``, ``K2 <9>``, ``R <9>``, ``t <3>``
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .detector import KeypointSet
from .tensor import FormatError

SCFK_MAGIC = b"SCFK"


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _floats(path, text: str, lineno: int, tokens) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise FormatError(f"{path}:{lineno}: expected numbers, got {text!r}") from None


def write_keypoints(path, kps: KeypointSet, binary: bool = False) -> None:
    has_prob = kps.probs is not None
    if binary:
        cols = [kps.points[:, 0], kps.points[:, 1], kps.scores] + ([kps.probs] if has_prob else [])
        body = np.column_stack(cols).astype("<f8").tobytes() if len(kps) else b""
        Path(path).write_bytes(SCFK_MAGIC + struct.pack("<3I", 1, len(kps), int(has_prob)) + body)
        return
    lines = []
    for i in range(len(kps)):
        fields = [kps.points[i, 0], kps.points[i, 1], kps.scores[i]]
        if has_prob:
            fields.append(kps.probs[i])
        lines.append(" ".join(_fmt(v) for v in fields))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_keypoints(path) -> KeypointSet:
    raw = Path(path).read_bytes()
    if raw[:4] == SCFK_MAGIC:
        if len(raw) < 16:
            raise FormatError(f"{path}: truncated SCFK header")
        version, n, has_prob = struct.unpack("<3I", raw[4:16])
        width = 4 if has_prob else 3
        if version != 1 or len(raw) != 16 + 8 * width * n:
            raise FormatError(f"{path}: malformed SCFK file")
        arr = np.frombuffer(raw[16:], dtype="<f8").reshape(n, width)
        return KeypointSet(arr[:, :2], arr[:, 2], arr[:, 3] if has_prob else None)
    rows = []
    for lineno, line in enumerate(raw.decode().splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) not in (3, 4):
            raise FormatError(f"{path}:{lineno}: expected 'row col score [prob]'")
        rows.append(_floats(path, line, lineno, tokens))
    if not rows:
        return KeypointSet(np.zeros((0, 2)), np.zeros(0))
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: probabilities present on some lines only")
    arr = np.array(rows)
    return KeypointSet(arr[:, :2], arr[:, 2], arr[:, 3] if arr.shape[1] == 4 else None)


def write_descriptors(path, descriptors: np.ndarray) -> None:
    d = np.asarray(descriptors, dtype=np.float32)
    Path(path).write_text("".join(" ".join(format(float(v), ".9g") for v in row) + "\n" for row in d))


def read_descriptors(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            rows.append(_floats(path, line, lineno, line.split()))
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    if len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: descriptor rows have different lengths")
    return np.array(rows, dtype=np.float32)


def write_matches(path, matches) -> None:
    lines = [f"{int(i)} {int(j)} {_fmt(d)}\n" for (i, j), d in zip(matches.pairs, matches.distances)]
    Path(path).write_text("".join(lines))


def read_matches(path) -> np.ndarray:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) not in (2, 3):
            raise FormatError(f"{path}:{lineno}: expected 'i j [dist]'")
        try:
            pairs.append((int(tokens[0]), int(tokens[1])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: indices must be integers") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def write_match_matrix(path, P_m) -> None:
    P = np.asarray(P_m, dtype=bool)
    Path(path).write_text("".join(f"{i} {j} {int(P[i, j])}\n" for i in range(P.shape[0]) for j in range(P.shape[1])))


def read_matrix(path) -> np.ndarray:
    text = Path(path).read_text()
    values = _floats(path, text, 1, text.split())
    if len(values) != 9:
        raise FormatError(f"{path}: expected 9 values, got {len(values)}")
    return np.array(values).reshape(3, 3)


def write_matrix(path, m) -> None:
    m = np.asarray(m, dtype=np.float64).reshape(3, 3)
    Path(path).write_text("\n".join(" ".join(_fmt(v) for v in row) for row in m) + "\n")


def read_pose(path) -> dict[str, np.ndarray]:
    sizes = {"K1": 9, "K2": 9, "R": 9, "t": 3}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        key = tokens[0]
        if key not in sizes:
            raise FormatError(f"{path}:{lineno}: unknown pose entry {key!r}")
        vals = _floats(path, line, lineno, tokens[1:])
        if len(vals) != sizes[key]:
            raise FormatError(f"{path}:{lineno}: {key} needs {sizes[key]} values")
        out[key] = np.array(vals).reshape(3, 3) if sizes[key] == 9 else np.array(vals)
    missing = set(sizes) - set(out)
    if missing:
        raise FormatError(f"{path}: missing {', '.join(sorted(missing))}")
    return out


def write_pose(path, K1, K2, R, t) -> None:
    lines = [f"{name} " + " ".join(_fmt(v) for v in np.ravel(val))
             for name, val in (("K1", K1), ("K2", K2), ("R", R), ("t", t))]
    Path(path).write_text("\n".join(lines) + "\n")
