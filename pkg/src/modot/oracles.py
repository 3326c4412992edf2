"""Slow reference implementations used to cross-check the fast paths.

Nothing here imports from the modules it checks.  Loops are explicit on
purpose; these are only ever run on small inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OracleError


@dataclass(frozen=True)
class GradCheckSpec:
    name: str
    shape: tuple[int, ...]
    h: float = 1e-4
    rtol: float = 1e-4

    def __post_init__(self):
        if self.h <= 0:
            raise OracleError("finite-difference step must be positive")
        if int(np.prod(self.shape)) > 256:
            raise OracleError(f"{self.name}: shape {self.shape} too large for exhaustive perturbation")


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise OracleError(f"non-finite function value when perturbing coordinate {np.unravel_index(i, x.shape)}")
        g[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b, floor: float = 1e-12) -> float:
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


# --------------------------------------------------------------------------- losses

def silog_reference(pred, gt, lam=0.85, alpha=10.0) -> float:
    d = [math.log(p) - math.log(g) for p, g in zip(np.ravel(pred), np.ravel(gt))]
    n = len(d)
    m2 = sum(v * v for v in d) / n
    m1 = sum(d) / n
    return alpha * math.sqrt(max(m2 - lam * m1 * m1, 0.0))


def cce_reference(logit, gt, eps=1e-6) -> float:
    logit, gt = np.ravel(logit), np.ravel(gt)
    n = len(gt)
    n_pos = sum(1 for v in gt if v == 1)
    beta = (n - n_pos) / n
    total = 0.0
    for z, y in zip(logit, gt):
        p = 1.0 / (1.0 + math.exp(-z))
        p = min(max(p, eps), 1 - eps)
        total += beta * math.log(p) if y == 1 else (1 - beta) * math.log(1 - p)
    return -total / n


def depth_diff_reference(depth, n=1) -> np.ndarray:
    D = np.asarray(depth, dtype=np.float64)
    H, W = D.shape
    out = np.zeros_like(D)

    def at(r, c):
        return D[min(max(r, 0), H - 1), min(max(c, 0), W - 1)]

    for r in range(H):
        for c in range(W):
            out[r, c] = abs(at(r - n, c) - at(r + n, c)) + abs(at(r, c - n) - at(r, c + n))
    return out


def obdcl_reference(depth, ob, n=1, variant="literal", margin=1.0) -> float:
    delta = depth_diff_reference(depth, n)
    ob = np.asarray(ob)
    total, count = 0.0, 0
    for r in range(ob.shape[0]):
        for c in range(ob.shape[1]):
            if ob[r, c]:
                gap = margin - delta[r, c]
                total += max(gap, 0.0) if variant == "hinge" else gap
                count += 1
    return total / count if count else 0.0


# --------------------------------------------------------------------------- metrics

def brute_ob_metrics(prob, gt, threshold=0.7, t=0) -> dict:
    prob, gt = np.asarray(prob), np.asarray(gt)
    H, W = gt.shape
    pred = [[prob[r][c] > threshold for c in range(W)] for r in range(H)]

    def near(mask, r, c):
        for dr in range(-t, t + 1):
            for dc in range(-t, t + 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < H and 0 <= cc < W and mask[rr][cc]:
                    return True
        return False

    tp = fp = fn = n_gt = 0
    for r in range(H):
        for c in range(W):
            if pred[r][c]:
                if near(gt, r, c):
                    tp += 1
                else:
                    fp += 1
            if gt[r][c]:
                n_gt += 1
                if not near(pred, r, c):
                    fn += 1
    recall = (n_gt - fn) / n_gt if n_gt else 1.0
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    f = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return {"recall": recall, "precision": precision, "fscore": f, "tp": tp, "fp": fp, "fn": fn}


def brute_depth_metrics(pred, gt, valid=None, cap=10.0, min_depth=1e-3) -> dict:
    pred, gt = np.asarray(pred, float), np.asarray(gt, float)
    sums = dict.fromkeys(("se", "sle", "are", "sre", "l10", "d1", "d2", "d3"), 0.0)
    count = 0
    for idx in np.ndindex(gt.shape):
        g = gt[idx]
        if valid is not None and not valid[idx]:
            continue
        if not (min_depth < g < cap):
            continue
        p = min(max(pred[idx], min_depth), cap)
        count += 1
        sums["se"] += (p - g) ** 2
        sums["sle"] += (math.log(p) - math.log(g)) ** 2
        sums["are"] += abs(p - g) / g
        sums["sre"] += (p - g) ** 2 / g
        sums["l10"] += abs(math.log10(p) - math.log10(g))
        ratio = max(p / g, g / p)
        sums["d1"] += ratio < 1.25
        sums["d2"] += ratio < 1.25 ** 2
        sums["d3"] += ratio < 1.25 ** 3
    if count == 0:
        raise OracleError("empty evaluation mask")
    return {
        "rmse": math.sqrt(sums["se"] / count), "rmse_log": math.sqrt(sums["sle"] / count),
        "abs_rel": sums["are"] / count, "sq_rel": sums["sre"] / count, "log10": sums["l10"] / count,
        "delta1": sums["d1"] / count, "delta2": sums["d2"] / count, "delta3": sums["d3"] / count,
    }


# --------------------------------------------------------------------------- network pieces

def naive_conv2d(x, weight, bias=None) -> np.ndarray:
    """'Same' cross-correlation, zero padding. x: (C, H, W); weight: (O, C, kh, kw), odd kernel sides."""
    x, w = np.asarray(x, float), np.asarray(weight, float)
    C, H, W = x.shape
    O, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((O, H, W))
    for o in range(O):
        for r in range(H):
            for c in range(W):
                acc = 0.0 if bias is None else float(bias[o])
                for ci in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            rr, cc = r + i - ph, c + j - pw
                            if 0 <= rr < H and 0 <= cc < W:
                                acc += w[o, ci, i, j] * x[ci, rr, cc]
                out[o, r, c] = acc
    return out


def channel_attention_reference(feat, w1, b1, w2, b2) -> np.ndarray:
    """Pool -> affine -> ReLU -> affine -> logistic, step by step. feat: (C, H, W)."""
    feat = np.asarray(feat, float)
    C = feat.shape[0]
    pooled = [float(np.sum(feat[c])) / feat[c].size for c in range(C)]
    hidden = []
    for j in range(len(b1)):
        s = b1[j] + sum(w1[j][c] * pooled[c] for c in range(C))
        hidden.append(max(s, 0.0))
    out = []
    for c in range(C):
        s = b2[c] + sum(w2[c][j] * hidden[j] for j in range(len(hidden)))
        out.append(1.0 / (1.0 + math.exp(-s)))
    return np.array(out)


def window_attention_reference(q, k, v) -> tuple[np.ndarray, np.ndarray]:
    """Single-window scaled dot-product attention. q: (Nq, d), k/v: (Nk, d)."""
    q, k, v = (np.asarray(a, float) for a in (q, k, v))
    d = q.shape[1]
    weights = np.zeros((q.shape[0], k.shape[0]))
    for i in range(q.shape[0]):
        scores = [float(q[i] @ k[j]) / math.sqrt(d) for j in range(k.shape[0])]
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        z = sum(e)
        weights[i] = [x / z for x in e]
    return weights @ v, weights


# --------------------------------------------------------------------------- geometry

def neighbor_contrast_scan(depth, tau, points=None, normals=None) -> np.ndarray:
    """Pixels having some 4-neighbour more than ``tau`` farther away.

    Given surface ``points`` and ``normals``, a pair only counts when the
    offset between the points along the normalized normal sum exceeds ``tau``.
    """
    depth = np.asarray(depth, float)
    H, W = depth.shape
    out = np.zeros((H, W), dtype=np.uint8)
    for r in range(H):
        for c in range(W):
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < H and 0 <= cc < W) or depth[rr, cc] - depth[r, c] <= tau:
                    continue
                if normals is not None:
                    n1 = np.asarray(normals[r, c], float)
                    n2 = np.asarray(normals[rr, cc], float)
                    m = n1 / math.sqrt(n1 @ n1) + n2 / math.sqrt(n2 @ n2)
                    length = math.sqrt(m @ m)
                    if length >= 1e-9:
                        chord = np.asarray(points[r, c], float) - np.asarray(points[rr, cc], float)
                        if abs(chord @ m) / length <= tau:
                            continue
                out[r, c] = 1
                break
    return out


def rasterize_sphere_silhouette(center, radius, width, height, focal) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole rasterization of a sphere: ``(inside, rim)`` where rim = inside pixels with an outside 4-neighbour."""
    cx, cy = width / 2, height / 2
    C = np.asarray(center, float)
    inside = np.zeros((height, width), dtype=bool)
    for r in range(height):
        for c in range(width):
            d = np.array([(c - cx) / focal, (r - cy) / focal, 1.0])
            d = d / np.linalg.norm(d)
            # distance from sphere centre to the ray line
            along = float(C @ d)
            dist2 = float(C @ C) - along * along
            inside[r, c] = along > 0 and dist2 <= radius * radius
    rim = np.zeros_like(inside)
    for r in range(height):
        for c in range(width):
            if not inside[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < height and 0 <= cc < width and not inside[rr, cc]:
                    rim[r, c] = True
    return inside, rim


def pearson(a, b) -> float:
    a, b = np.ravel(np.asarray(a, float)), np.ravel(np.asarray(b, float))
    a, b = a - a.mean(), b - b.mean()
    return float((a @ b) / math.sqrt((a @ a) * (b @ b)))
