"""Tripartite training loss: SILog depth + class-balanced CE boundaries + OB-depth constraint.

All functions accept maps shaped ``(H, W)``, ``(B, H, W)`` or ``(B, 1, H, W)``
and reduce per image before averaging over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, DomainError, ShapeError, UndefinedError


@dataclass
class LossWeights:
    w_d: float = 1.2
    w_ob: float = 1.0
    w_c: float = 0.1

    def __post_init__(self):
        if min(self.w_d, self.w_ob, self.w_c) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_d: torch.Tensor
    l_ob: torch.Tensor
    l_c: torch.Tensor
    total: torch.Tensor
    side: list[torch.Tensor] = field(default_factory=list)

    def as_floats(self) -> dict[str, float]:
        out = {k: float(getattr(self, k).detach()) for k in ("l_d", "l_ob", "l_c", "total")}
        out["side"] = [float(s.detach()) for s in self.side]
        return out


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x.unsqueeze(0)
    if x.dim() == 4:
        if x.shape[1] != 1:
            raise ShapeError(f"expected a single-channel map, got shape {tuple(x.shape)}")
        return x[:, 0]
    if x.dim() == 3:
        return x
    raise ShapeError(f"expected (H,W), (B,H,W) or (B,1,H,W), got {tuple(x.shape)}")


def _safe_sqrt(v: torch.Tensor) -> torch.Tensor:
    # sqrt with a zero (not NaN) gradient at v == 0
    pos = v > 1e-30
    return torch.where(pos, torch.sqrt(torch.where(pos, v, torch.ones_like(v))), torch.zeros_like(v))


def silog(pred: torch.Tensor, gt: torch.Tensor, valid_mask: torch.Tensor | None = None,
          lam: float = 0.85, alpha: float = 10.0) -> torch.Tensor:
    """alpha * sqrt(mean(d^2) - lam * mean(d)^2) with d = ln(pred) - ln(gt) over valid pixels."""
    pred, gt = _as_batch(pred), _as_batch(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} and gt {tuple(gt.shape)} differ")
    mask = torch.ones_like(gt, dtype=torch.bool) if valid_mask is None else _as_batch(valid_mask) > 0
    losses = []
    for p, g, m in zip(pred, gt, mask):
        if not m.any():
            raise UndefinedError("SILog over an empty valid mask is undefined")
        p, g = p[m], g[m]
        if (p <= 0).any() or (g <= 0).any():
            raise DomainError("SILog needs strictly positive depths on the valid mask")
        d = torch.log(p) - torch.log(g)
        mean = d.mean()
        # mean(d^2) - lam*mean^2, arranged so the result stays >= 0 under rounding
        var = ((d - mean) ** 2).mean() + (1.0 - lam) * mean ** 2
        losses.append(alpha * _safe_sqrt(var))
    return torch.stack(losses).mean()


def cce(ob_logit: torch.Tensor, gt_mask: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Class-balanced binary cross-entropy with a per-image positive weight.

    beta = |negatives| / N weights the positive term and (1 - beta) the
    negative term; probabilities are clamped to [eps, 1 - eps].
    """
    logit, gt = _as_batch(ob_logit), _as_batch(gt_mask)
    if logit.shape != gt.shape:
        raise ShapeError(f"logit {tuple(logit.shape)} and mask {tuple(gt.shape)} differ")
    if not ((gt == 0) | (gt == 1)).all():
        raise DomainError("OB ground truth must be binary")
    gt = gt.to(logit.dtype)
    lo, hi = torch.log(torch.tensor(eps, dtype=logit.dtype)), torch.log1p(torch.tensor(-eps, dtype=logit.dtype))
    log_p = F.logsigmoid(logit).clamp(lo, hi)
    log_q = F.logsigmoid(-logit).clamp(lo, hi)
    n = gt[0].numel()
    pos = gt.flatten(1).sum(1)
    beta = (n - pos) / n
    per_image = -(beta * (gt * log_p).flatten(1).sum(1) + (1 - beta) * ((1 - gt) * log_q).flatten(1).sum(1)) / n
    return per_image.mean()


def depth_diff_map(depth: torch.Tensor, n: int = 1) -> torch.Tensor:
    """|D(h-n,w) - D(h+n,w)| + |D(h,w-n) - D(h,w+n)| with replicate padding; same shape as input."""
    shape = depth.shape
    d = _as_batch(depth)
    H, W = d.shape[-2:]
    if n < 1 or n >= min(H, W):
        raise ConfigError(f"shift n={n} must satisfy 1 <= n < min(H, W) = {min(H, W)}")
    padded = F.pad(d.unsqueeze(1), (n, n, n, n), mode="replicate")[:, 0]
    top = padded[:, : H, n: n + W]
    bottom = padded[:, 2 * n: 2 * n + H, n: n + W]
    left = padded[:, n: n + H, : W]
    right = padded[:, n: n + H, 2 * n: 2 * n + W]
    delta = (top - bottom).abs() + (left - right).abs()
    return delta.reshape(shape)


def obdcl(depth: torch.Tensor, ob_mask: torch.Tensor, n: int = 1, variant: str = "literal",
          margin: float = 1.0) -> torch.Tensor:
    """Mean of ``margin - Delta`` (literal) or ``max(0, margin - Delta)`` (hinge) over OB pixels.

    An image without OB pixels contributes 0.
    """
    d, b = _as_batch(depth), _as_batch(ob_mask)
    if d.shape != b.shape:
        raise ShapeError(f"depth {tuple(d.shape)} and OB mask {tuple(b.shape)} differ")
    if variant not in ("literal", "hinge"):
        raise ConfigError(f"unknown OBDCL variant {variant!r}")
    b = b.to(d.dtype)
    gap = margin - depth_diff_map(d, n)
    if variant == "hinge":
        gap = gap.clamp_min(0.0)
    count = b.flatten(1).sum(1)
    per_image = (b * gap).flatten(1).sum(1) / count.clamp_min(1.0)
    return torch.where(count > 0, per_image, torch.zeros_like(per_image)).mean()


def side_weights(count: int, weights=None) -> list[float]:
    if weights is None:
        return [1.0 / count] * count
    if len(weights) != count:
        raise ConfigError(f"expected {count} OB supervision weights, got {len(weights)}")
    total = float(sum(weights))
    return [w / total for w in weights]


def total_loss(output, gt_depth: torch.Tensor, gt_ob: torch.Tensor, valid_mask: torch.Tensor | None = None,
               weights: LossWeights | None = None, lam: float = 0.85, alpha: float = 10.0, n: int = 1,
               variant: str = "literal", margin: float = 1.0, eps: float = 1e-6,
               ob_weights=None) -> LossBreakdown:
    """Weighted sum w_d*L_D + w_ob*L_OB + w_c*L_C.

    ``output`` needs ``depth`` and, for joint models, ``ob_logits`` (final map
    first, then side outputs).  The boundary-constraint term compares the
    *predicted* depth against the *ground-truth* OB mask.
    """
    weights = weights or LossWeights()
    zero = output.depth.new_zeros(())
    l_d = silog(output.depth, gt_depth, valid_mask, lam, alpha)
    logits = list(getattr(output, "ob_logits", None) or [])
    side = [cce(lg, gt_ob, eps) for lg in logits]
    if side:
        l_ob = sum(w * s for w, s in zip(side_weights(len(side), ob_weights), side))
    else:
        l_ob = zero
    l_c = obdcl(output.depth, gt_ob, n, variant, margin)
    total = weights.w_d * l_d + weights.w_ob * l_ob + weights.w_c * l_c
    return LossBreakdown(l_d, l_ob, l_c, total, side)


def loss_from_config(output, gt_depth, gt_ob, valid_mask, loss_cfg) -> LossBreakdown:
    return total_loss(output, gt_depth, gt_ob, valid_mask,
                      LossWeights(loss_cfg.w_d, loss_cfg.w_ob, loss_cfg.w_c), loss_cfg.silog_lambda,
                      loss_cfg.silog_alpha, loss_cfg.n, loss_cfg.variant, loss_cfg.margin,
                      loss_cfg.cce_eps, loss_cfg.side_weights)
