"""Slow, loop-based reference computations.

Each function here recomputes a quantity from its definition without sharing
code with the vectorised implementation it is used to check.
"""

from __future__ import annotations

import functools
import math

import numpy as np


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    h, w, c_in = x.shape
    c_out, _, k, _ = kernel.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    out = np.zeros((h_out, w_out, c_out))
    for i in range(h_out):
        for j in range(w_out):
            for o in range(c_out):
                acc = float(bias[o])
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            r = i * stride + di - padding
                            q = j * stride + dj - padding
                            if 0 <= r < h and 0 <= q < w:
                                acc += float(x[r, q, c]) * float(kernel[o, c, di, dj])
                out[i, j, o] = acc
    return out


def bilinear_point(x: np.ndarray, row: float, col: float) -> np.ndarray:
    h, w = x.shape[:2]
    row = min(max(row, 0.0), h - 1.0)
    col = min(max(col, 0.0), w - 1.0)
    r0, c0 = int(math.floor(row)), int(math.floor(col))
    r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
    a, b = row - r0, col - c0
    return ((1 - a) * (1 - b) * x[r0, c0].astype(np.float64) + (1 - a) * b * x[r0, c1]
            + a * (1 - b) * x[r1, c0] + a * b * x[r1, c1])


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = x.shape[:2]
    out = np.zeros((out_h, out_w, x.shape[2]))
    for i in range(out_h):
        for j in range(out_w):
            out[i, j] = bilinear_point(x, (i + 0.5) * h / out_h - 0.5, (j + 0.5) * w / out_w - 0.5)
    return out


def softplus(v: float) -> float:
    return math.log1p(math.exp(v)) if v < 30 else v + math.log1p(math.exp(-v))


def peakiness(x: np.ndarray, window: int = 3):
    """(eta, zeta, S) by explicit loops, neighbourhoods truncated at borders."""
    h, w, c = x.shape
    r = window // 2
    eta = np.zeros((h, w, c))
    zeta = np.zeros((h, w, c))
    S = np.zeros((h, w, 1))
    for i in range(h):
        for j in range(w):
            chan_mean = sum(float(x[i, j, t]) for t in range(c)) / c
            best = -math.inf
            for k in range(c):
                vals = [float(x[a, b, k]) for a in range(max(0, i - r), min(h, i + r + 1))
                        for b in range(max(0, j - r), min(w, j + r + 1))]
                eta[i, j, k] = softplus(float(x[i, j, k]) - chan_mean)
                zeta[i, j, k] = softplus(float(x[i, j, k]) - sum(vals) / len(vals))
                best = max(best, eta[i, j, k] * zeta[i, j, k])
            S[i, j, 0] = best
    return eta, zeta, S


@functools.lru_cache(maxsize=16)
def _within_window(h: int, w: int, r: int) -> np.ndarray:
    rows, cols = np.divmod(np.arange(h * w), w)
    return (np.abs(rows[:, None] - rows[None, :]) <= r) & (np.abs(cols[:, None] - cols[None, :]) <= r)


def beats_matrix(score: np.ndarray) -> np.ndarray:
    """B[p, q] is True when pixel q outranks pixel p: higher score, or an
    equal score and a smaller row-major index."""
    flat = np.asarray(score, dtype=np.float64).ravel()
    idx = np.arange(flat.size)
    return (flat[None, :] > flat[:, None]) | ((flat[None, :] == flat[:, None]) & (idx[None, :] < idx[:, None]))


def nms(score: np.ndarray, window: int, threshold: float, top_k: int, beats: np.ndarray | None = None):
    """All-pairs suppression: a candidate dies if any pixel within Chebyshev
    radius window // 2 outranks it.  Returns (points, scores) best first.
    ``beats`` may be passed in to reuse it across windows and thresholds."""
    s = np.asarray(score, dtype=np.float64).reshape(score.shape[0], score.shape[1])
    h, w = s.shape
    flat = s.ravel()
    if beats is None:
        beats = beats_matrix(s)
    suppressed = np.any(_within_window(h, w, window // 2) & beats, axis=1)
    keep = [p for p in range(h * w) if flat[p] >= threshold and not suppressed[p]]
    keep.sort(key=lambda p: (-flat[p], p))
    keep = keep[:top_k]
    return np.array([(p // w, p % w) for p in keep], dtype=np.float64).reshape(-1, 2), flat[keep]


def keypoint_loss(p1, p2, P_m, l_fme: float, lambda_reg: float) -> float:
    total = 0.0
    for i in range(len(p1)):
        for j in range(len(p2)):
            t = math.tanh(l_fme)
            r = (1.0 - t) if P_m[i][j] else -t
            total += r * math.log(p1[i] * p2[j])
    reg = sum(math.log(p) for p in p1) + sum(math.log(p) for p in p2)
    return (total + lambda_reg * l_fme * reg) / (len(p1) + len(p2))


def point_line_distance(F: np.ndarray, x, y) -> float:
    """Distance of (row, col) ``y`` to the line F [x_col, x_row, 1]."""
    a = sum(F[0][k] * v for k, v in enumerate((x[1], x[0], 1.0)))
    b = sum(F[1][k] * v for k, v in enumerate((x[1], x[0], 1.0)))
    c = sum(F[2][k] * v for k, v in enumerate((x[1], x[0], 1.0)))
    return abs(a * y[1] + b * y[0] + c) / math.sqrt(a * a + b * b)


def description_loss(F: np.ndarray, queries, predictions, variances, masks) -> float:
    num = den = 0.0
    for x, y, var, m in zip(queries, predictions, variances, masks):
        if m and var > 0:
            num += point_line_distance(F, x, y) / var
            den += 1.0 / var
    return num / den


def cross_norm(x: np.ndarray, p) -> np.ndarray:
    """Spatial plus channel z-score branches, two-pass statistics in loops."""
    h, w, c = x.shape
    x = np.asarray(x, dtype=np.float64)
    v = {k: a.astype(np.float64) for k, a in p.as_dict().items()}
    out = np.zeros((h, w, c))
    for k in range(c):
        vals = [x[i, j, k] for i in range(h) for j in range(w)]
        mu = sum(vals) / len(vals)
        sd = math.sqrt(sum((t - mu) ** 2 for t in vals) / len(vals) + p.eps)
        out[:, :, k] += (v["gamma_s"][k] * (x[:, :, k] - mu) / sd + v["beta_s"][k]) * v["w_s"][k]
    for i in range(h):
        for j in range(w):
            vals = list(x[i, j])
            mu = sum(vals) / c
            sd = math.sqrt(sum((t - mu) ** 2 for t in vals) / c + p.eps)
            for k in range(c):
                out[i, j, k] += (v["gamma_c"][k] * (x[i, j, k] - mu) / sd + v["beta_c"][k]) * v["w_c"][k]
    return out


def _conv_unit_staged(x: np.ndarray, unit) -> np.ndarray:
    # Plain-numpy conv (shifted sums), instance norm, then activation.
    k, pad = unit.conv.size, unit.conv.padding
    kernel = unit.conv.kernel.astype(np.float64)
    h, w, _ = x.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((h, w, kernel.shape[0])) + unit.conv.bias.astype(np.float64)
    for di in range(k):
        for dj in range(k):
            out += xp[di:di + h, dj:dj + w] @ kernel[:, :, di, dj].T
    out = np.asarray(out, dtype=np.float32).astype(np.float64)
    mu = out.mean(axis=(0, 1))
    sd = np.sqrt(out.var(axis=(0, 1)) + unit.norm.eps)
    out = (out - mu) / sd * unit.norm.gain + unit.norm.shift
    out = np.asarray(out, dtype=np.float32).astype(np.float64)
    if unit.act == "prelu":
        out = np.where(out >= 0, out, unit.slope * out)
    elif unit.act == "softplus":
        out = np.vectorize(softplus)(out)
    return np.asarray(out, dtype=np.float32).astype(np.float64)


def detection_staged(image: np.ndarray, f_cn: np.ndarray, f0: np.ndarray, w):
    """Step-by-step score map: both peakiness maps, the two first-layer
    outputs, their aggregation, the 1x1 layer and the final product.

    Returns a dict of every intermediate so tests can compare each stage.
    """
    h, wd = image.shape[:2]
    joint = np.concatenate([f_cn, f0], axis=2).astype(np.float64)
    img = image.astype(np.float64)
    _, _, s_l = peakiness(joint)
    _, _, s_r = peakiness(img)
    s_l = s_l.astype(np.float32).astype(np.float64)
    s_r = s_r.astype(np.float32).astype(np.float64)
    h0_l = _conv_unit_staged((joint * s_l).astype(np.float32).astype(np.float64), w.layer0_left)
    h0_r = _conv_unit_staged((img * s_r).astype(np.float32).astype(np.float64), w.layer0_right)
    up = bilinear_resize(h0_l, h, wd).astype(np.float32).astype(np.float64)
    h1 = _conv_unit_staged(np.concatenate([up, h0_r], axis=2), w.layer1)
    h2 = _conv_unit_staged(h1, w.layer2)
    s_l_up = bilinear_resize(s_l, h, wd).astype(np.float32).astype(np.float64)
    score = (s_l_up * s_r).astype(np.float32).astype(np.float64) * h2
    return {"S_l": s_l, "S_r": s_r, "H0_l": h0_l, "H0_r": h0_r, "H1": h1, "H2": h2, "score": score}


def mutual_nn(a: np.ndarray, b: np.ndarray, ratio=None):
    """All-pairs mutual nearest neighbours with an optional two-sided ratio test."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = [[math.sqrt(sum((x - y) ** 2 for x, y in zip(u, v))) for v in b] for u in a]

    def ranked(values):
        order = sorted(range(len(values)), key=lambda k: (values[k], k))
        best = values[order[0]]
        if len(order) == 1:
            return order[0], 0.0
        second = values[order[1]]
        return order[0], (best / second if second > 0 else 1.0)

    out = []
    for i in range(len(a)):
        j, r_ij = ranked(d[i])
        i_back, r_ji = ranked([d[k][j] for k in range(len(a))])
        if i_back != i:
            continue
        if ratio is not None and not (r_ij < ratio and r_ji < ratio):
            continue
        out.append((i, j))
    return out
