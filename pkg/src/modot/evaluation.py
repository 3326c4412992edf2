"""Full-resolution evaluation, JSON reports and single-image inference."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .checkpoint import Checkpoint
from .data import DatasetManifest, encode_depth
from .errors import ConfigError, DataError
from .losses import depth_diff_map
from .metrics import DEPTH_KEYS, OB_KEYS, depth_metrics, mean_metrics, ob_counts, ob_metrics
from .models import normalize_image, pad_to_multiple, unpad

REPORT_VERSION = 1


def _prepare(rgb: np.ndarray) -> torch.Tensor:
    return normalize_image(torch.from_numpy(np.ascontiguousarray(rgb)).permute(2, 0, 1)[None].float())


@torch.no_grad()
def predict(model, rgb: np.ndarray, stage: int = 1) -> tuple[np.ndarray, np.ndarray | None, tuple]:
    """Run the model on one (H, W, 3) uint8 image, padding to a multiple of 32 if needed."""
    model.eval()
    image, pads = pad_to_multiple(_prepare(rgb))
    out = model(image, stage=stage)
    depth = unpad(out.depth, pads)[0, 0].numpy()
    prob = None if out.ob_prob is None else unpad(out.ob_prob, pads)[0, 0].numpy()
    return depth, prob, pads


def boundary_contrast(depth: np.ndarray, ob: np.ndarray, n: int = 1) -> float | None:
    """Mean cross-boundary depth difference of ``depth`` over the pixels of ``ob``."""
    if not ob.any():
        return None
    delta = depth_diff_map(torch.from_numpy(np.asarray(depth, dtype=np.float64)), n).numpy()
    return float(delta[ob > 0].mean())


def evaluate(checkpoint: Checkpoint | str, manifest: DatasetManifest, stage: int = 1, split: str = "test",
             oracle: bool = False, eval_cfg=None) -> dict:
    """Per-image and mean depth / OB metrics over a manifest split.

    With ``oracle=True`` the ground truth is injected as the prediction,
    which must yield perfect scores.
    """
    if isinstance(checkpoint, (str, Path)):
        checkpoint = Checkpoint.load(checkpoint)
    cfg = checkpoint.cfg()
    ev = eval_cfg or cfg.eval
    if stage not in (1, 2):
        raise ConfigError(f"stage must be 1 or 2, got {stage}")
    model = None if oracle else checkpoint.build_model()
    if model is not None and stage == 2 and model.ssr is None:
        raise ConfigError("checkpoint has no refinement stage")
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"manifest has no {split!r} samples")
    joint = cfg.model.tasks == "joint"
    per_image, padded = [], []
    pr_counts = {t: [0, 0, 0, 0] for t in ev.pr_thresholds}
    for sid, sample in manifest.load(split):
        if oracle:
            depth, prob, pads = sample.depth.astype(np.float64), sample.ob_mask.astype(np.float64), (0, 0, 0, 0)
        else:
            depth, prob, pads = predict(model, sample.rgb, stage)
        if any(pads):
            padded.append({"sample_id": sid, "pads": list(pads)})
        row = {"sample_id": sid, **depth_metrics(depth, sample.depth, sample.valid_mask, ev.depth_cap,
                                                   ev.min_depth).to_dict()}
        row["boundary_contrast"] = boundary_contrast(depth, sample.ob_mask, cfg.loss.n)
        if prob is not None:
            obm = ob_metrics(prob, sample.ob_mask, ev.ob_threshold, ev.tolerance_radius)
            row.update({k: getattr(obm, k) for k in OB_KEYS})
            row.update(tp=obm.tp, fp=obm.fp, fn=obm.fn)
            for t in ev.pr_thresholds:
                tp, fp, fn, n_gt = ob_counts(prob, sample.ob_mask, t, ev.tolerance_radius)
                acc = pr_counts[t]
                acc[0] += tp
                acc[1] += fp
                acc[2] += fn
                acc[3] += n_gt
        per_image.append(row)

    contrasts = [r["boundary_contrast"] for r in per_image if r["boundary_contrast"] is not None]
    report = {
        "format_version": REPORT_VERSION,
        "stage": stage,
        "split": split,
        "oracle": oracle,
        "num_images": len(per_image),
        "checkpoint": {"step": checkpoint.step, "trained_stage": checkpoint.stage,
                       "checksums": checkpoint.checksums},
        "config": cfg.to_dict(),
        "eval": {"depth_cap": ev.depth_cap, "min_depth": ev.min_depth, "ob_threshold": ev.ob_threshold,
                 "tolerance_radius": ev.tolerance_radius, "aggregation": "mean over images"},
        "encoder": {"kind": cfg.model.encoder.kind, "window_size": cfg.model.encoder.window_size,
                    "base_channels": cfg.model.encoder.base_channels},
        "depth": mean_metrics(per_image, DEPTH_KEYS),
        "boundary_contrast": float(np.mean(contrasts)) if contrasts else None,
        "padding": padded,
        "per_image": per_image,
    }
    if joint:
        agg = mean_metrics(per_image, OB_KEYS)
        agg.update(threshold=ev.ob_threshold, tp=sum(r["tp"] for r in per_image),
                   fp=sum(r["fp"] for r in per_image), fn=sum(r["fn"] for r in per_image))
        report["ob"] = agg
        curve = []
        for t in ev.pr_thresholds:
            tp, fp, fn, n_gt = pr_counts[t]
            recall = (n_gt - fn) / n_gt if n_gt else 1.0
            precision = tp / (tp + fp) if tp + fp else 1.0
            f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            curve.append({"threshold": t, "recall": recall, "precision": precision, "fscore": f})
        report["ob_pr_curve"] = curve
    return report


def write_report(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_image(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def infer(checkpoint: Checkpoint | str, image_path: str | Path, out_dir: str | Path, stage: int | None = None) -> dict:
    """Write ``<stem>.depth.png`` (16-bit mm), ``<stem>.ob.png`` (255*p) and ``<stem>.depth_vis.png``."""
    from .plotting import colorize_depth

    if isinstance(checkpoint, (str, Path)):
        checkpoint = Checkpoint.load(checkpoint)
    model = checkpoint.build_model()
    if stage is None:
        stage = 2 if model.ssr is not None and checkpoint.stage == 2 else 1
    rgb = read_image(image_path)
    depth, prob, _ = predict(model, rgb, stage)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    max_depth = checkpoint.cfg().model.max_depth
    files = {}
    mm = np.maximum(encode_depth(depth), 1)
    files["depth"] = out / f"{stem}.depth.png"
    Image.fromarray(mm).save(files["depth"])
    if prob is not None:
        files["ob"] = out / f"{stem}.ob.png"
        Image.fromarray(np.rint(np.clip(prob, 0, 1) * 255).astype(np.uint8), mode="L").save(files["ob"])
    files["depth_vis"] = out / f"{stem}.depth_vis.png"
    Image.fromarray(colorize_depth(depth, 0.0, max_depth)).save(files["depth_vis"])
    return {k: str(v) for k, v in files.items()}
