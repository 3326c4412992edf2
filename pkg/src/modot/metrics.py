"""Depth metrics and fixed-threshold occlusion-boundary recall / precision / F-score."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import ConfigError, DomainError, UndefinedError

DEPTH_KEYS = ("rmse", "rmse_log", "abs_rel", "sq_rel", "log10", "delta1", "delta2", "delta3")
OB_KEYS = ("recall", "precision", "fscore")


@dataclass
class DepthMetrics:
    rmse: float
    rmse_log: float
    abs_rel: float
    sq_rel: float
    log10: float
    delta1: float
    delta2: float
    delta3: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class OBMetrics:
    recall: float
    precision: float
    fscore: float
    threshold: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)


def _np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def depth_metrics(pred, gt, valid_mask=None, depth_cap: float = 10.0, min_depth: float = 1e-3) -> DepthMetrics:
    """Standard depth errors over valid pixels whose ground truth lies in ``(min_depth, depth_cap)``.

    Predictions are clipped to ``[min_depth, depth_cap]`` before scoring.
    """
    if depth_cap <= 0:
        raise ConfigError("depth_cap must be positive")
    pred = _np(pred).astype(np.float64)
    gt = _np(gt).astype(np.float64)
    mask = (gt > min_depth) & (gt < depth_cap)
    if valid_mask is not None:
        mask &= _np(valid_mask) > 0
    if not mask.any():
        raise UndefinedError("no pixels left to evaluate after masking")
    p = np.clip(pred[mask], min_depth, depth_cap)
    g = gt[mask]
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return mask
    return maximum_filter(mask.astype(np.uint8), size=2 * radius + 1, mode="constant", cval=0) > 0


def ob_counts(prob, gt, threshold: float = 0.7, tolerance_radius: int = 0) -> tuple[int, int, int, int]:
    """Return ``(tp, fp, fn, n_gt)`` for the binarization ``prob > threshold``.

    A predicted positive is a true positive when a GT positive lies within
    Chebyshev distance ``tolerance_radius``; a GT positive is missed when no
    predicted positive lies within the same distance.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"OB threshold must lie in [0, 1], got {threshold}")
    if tolerance_radius < 0:
        raise ConfigError("tolerance_radius must be >= 0")
    prob = _np(prob).astype(np.float64)
    gt = _np(gt)
    if prob.shape != gt.shape:
        raise DomainError(f"prob {prob.shape} and GT {gt.shape} shapes differ")
    if not np.isin(gt, (0, 1)).all():
        raise DomainError("OB ground truth must be binary")
    pred = prob > threshold
    gt = gt.astype(bool)
    tp = int(np.count_nonzero(pred & _dilate(gt, tolerance_radius)))
    fp = int(np.count_nonzero(pred)) - tp
    fn = int(np.count_nonzero(gt & ~_dilate(pred, tolerance_radius)))
    return tp, fp, fn, int(np.count_nonzero(gt))


def _rates(tp, fp, fn, n_gt):
    # 0/0 conventions: recall 1 with no GT, precision 1 with no predictions
    recall = (n_gt - fn) / n_gt if n_gt else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    fscore = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return recall, precision, fscore


def ob_metrics(prob, gt, threshold: float = 0.7, tolerance_radius: int = 0) -> OBMetrics:
    tp, fp, fn, n_gt = ob_counts(prob, gt, threshold, tolerance_radius)
    recall, precision, fscore = _rates(tp, fp, fn, n_gt)
    return OBMetrics(recall, precision, fscore, float(threshold), tp, fp, fn)


def mean_metrics(items: list[dict], keys) -> dict[str, float]:
    """Mean over images of each key."""
    if not items:
        raise UndefinedError("cannot aggregate zero images")
    return {k: float(np.mean([it[k] for it in items])) for k in keys}
