"""Two-stage training harness.

Stage one trains the whole network end-to-end on random crops.  Stage two
trains only the refinement module on full images while stage one stays
frozen; the freeze is verified by parameter checksums.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, group_checksum
from .config import Config
from .data import DatasetManifest
from .errors import ConfigError, DataError, FreezeError, NumericError
from .losses import loss_from_config
from .models import MoDOT, build_model, normalize_image

log = logging.getLogger(__name__)


@dataclass
class ArrayDataset:
    ids: list[str]
    rgb: np.ndarray  # (N, H, W, 3) uint8
    depth: np.ndarray  # (N, H, W) float32
    ob: np.ndarray  # (N, H, W) uint8
    valid: np.ndarray  # (N, H, W) uint8

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, split: str = "train") -> "ArrayDataset":
        items = manifest.load(split)
        if not items:
            raise DataError(f"manifest {manifest.root} has no {split!r} samples")
        shapes = {s.shape for _, s in items}
        if len(shapes) != 1:
            raise DataError(f"{split} samples have mixed sizes {sorted(shapes)}")
        return cls([i for i, _ in items], np.stack([s.rgb for _, s in items]),
                   np.stack([s.depth for _, s in items]), np.stack([s.ob_mask for _, s in items]),
                   np.stack([s.valid_mask for _, s in items]))

    def __len__(self):
        return len(self.ids)

    def tensors(self, index) -> dict[str, torch.Tensor]:
        idx = np.atleast_1d(index)
        return _to_tensors(self.rgb[idx], self.depth[idx], self.ob[idx], self.valid[idx])


def _to_tensors(rgb, depth, ob, valid) -> dict[str, torch.Tensor]:
    image = torch.from_numpy(np.ascontiguousarray(rgb)).permute(0, 3, 1, 2).float()
    return {
        "image": normalize_image(image),
        "depth": torch.from_numpy(np.ascontiguousarray(depth, dtype=np.float32))[:, None],
        "ob": torch.from_numpy(np.ascontiguousarray(ob, dtype=np.float32))[:, None],
        "valid": torch.from_numpy(np.ascontiguousarray(valid, dtype=np.float32))[:, None],
    }


def sample_batch(ds: ArrayDataset, rng: np.random.Generator, batch_size: int, crop: int | None,
                 hflip: bool = True, color_jitter: float = 0.0) -> dict[str, torch.Tensor]:
    """Random crop + joint horizontal flip (image, depth and OB move together)."""
    H, W = ds.depth.shape[1:]
    if crop is not None and (crop > H or crop > W):
        raise ConfigError(f"crop {crop} exceeds image size {H}x{W}")
    idx = rng.integers(len(ds), size=batch_size)
    out = {k: [] for k in ("rgb", "depth", "ob", "valid")}
    for i in idx:
        if crop is None:
            r = c = 0
            h, w = H, W
        else:
            r, c = int(rng.integers(H - crop + 1)), int(rng.integers(W - crop + 1))
            h = w = crop
        flip = hflip and rng.random() < 0.5
        rgb = ds.rgb[i, r:r + h, c:c + w].astype(np.float32)
        if color_jitter > 0:
            rgb = np.clip(rgb * rng.uniform(1 - color_jitter, 1 + color_jitter), 0, 255)
        for key, arr in (("rgb", rgb), ("depth", ds.depth[i, r:r + h, c:c + w]),
                         ("ob", ds.ob[i, r:r + h, c:c + w]), ("valid", ds.valid[i, r:r + h, c:c + w])):
            out[key].append(arr[:, ::-1] if flip else arr)
    return _to_tensors(*(np.stack(out[k]) for k in ("rgb", "depth", "ob", "valid")))


def linear_lr(step: int, total: int, lr0: float, lr1: float) -> float:
    if total <= 1:
        return lr0
    return lr0 + (lr1 - lr0) * step / (total - 1)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    path: Path
    history: list[dict] = field(default_factory=list)


def _rng_state(rng: np.random.Generator) -> dict:
    return {"numpy": rng.bit_generator.state, "torch": torch.get_rng_state()}


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state["numpy"]
    torch.set_rng_state(state["torch"])
    return rng


def _out_dir(cfg: Config, out_dir) -> Path:
    path = Path(out_dir or cfg.train.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _check_finite(bd, step, last_good):
    if not math.isfinite(float(bd.total.detach())):
        raise NumericError(f"non-finite loss at step {step}; last good checkpoint: {last_good or 'none'}")


def _run(model: MoDOT, cfg: Config, ds: ArrayDataset, stage: int, params, forward, out: Path,
         resume: Checkpoint | None, crop, log_every: int, on_step=None) -> TrainResult:
    t = cfg.train
    total = t.steps_stage1 if stage == 1 else t.steps_stage2
    optimizer = torch.optim.Adam(params, lr=t.lr, weight_decay=t.weight_decay)
    start = 0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, stage]))
    if resume is not None:
        optimizer.load_state_dict(resume.optimizer)
        rng = _restore_rng(resume.rng)
        start = resume.step
    log_path = out / f"train_stage{stage}.jsonl"
    mode = "a" if resume is not None else "w"
    history, last_good = [], resume.path if resume is not None else None
    with log_path.open(mode, encoding="utf-8") as fh:
        for step in range(start, total):
            lr = linear_lr(step, total, t.lr, t.lr_end)
            for g in optimizer.param_groups:
                g["lr"] = lr
            batch = sample_batch(ds, rng, t.batch_size, crop, t.hflip, t.color_jitter)
            bd = loss_from_config(forward(batch["image"]), batch["depth"], batch["ob"], batch["valid"], cfg.loss)
            _check_finite(bd, step, last_good)
            optimizer.zero_grad(set_to_none=True)
            bd.total.backward()
            optimizer.step()
            rec = {"stage": stage, "step": step + 1, "lr": lr, **bd.as_floats()}
            history.append(rec)
            if log_every and (step + 1) % log_every == 0:
                fh.write(json.dumps(rec) + "\n")
            if on_step is not None:
                on_step(step + 1, model)
            if t.checkpoint_every and (step + 1) % t.checkpoint_every == 0 and step + 1 < total:
                ck = Checkpoint.capture(model, cfg, stage, step + 1, total, optimizer, _rng_state(rng))
                last_good = ck.save(out / f"stage{stage}_step{step + 1:06d}.pt")
    ck = Checkpoint.capture(model, cfg, stage, total, total, optimizer, _rng_state(rng))
    path = ck.save(out / f"stage{stage}.pt")
    return TrainResult(ck, path, history)


def train_stage1(cfg: Config, manifest: DatasetManifest, out_dir=None, resume: Checkpoint | str | None = None,
                 on_step=None) -> TrainResult:
    """Minimize the tripartite loss over random crops of the training split."""
    out = _out_dir(cfg, out_dir)
    ds = ArrayDataset.from_manifest(manifest, "train")
    if isinstance(resume, (str, Path)):
        resume = Checkpoint.load(resume)
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model)
    if resume is not None:
        if resume.stage != 1:
            raise ConfigError(f"cannot resume stage one from a stage-{resume.stage} checkpoint")
        model.stage1.load_state_dict(resume.stage1)
        if model.ssr is not None and resume.ssr is not None:
            model.ssr.load_state_dict(resume.ssr)
    model.train()
    return _run(model, cfg, ds, 1, model.stage1.parameters(), lambda x: model.stage1(x), out, resume,
                cfg.train.crop_size, cfg.train.log_every, on_step)


def train_stage2(cfg: Config, stage1: Checkpoint | str, manifest: DatasetManifest, out_dir=None,
                 resume: Checkpoint | str | None = None, on_step=None, verify_every: int = 50) -> TrainResult:
    """Train the refinement module on full images with stage one frozen."""
    out = _out_dir(cfg, out_dir)
    if isinstance(stage1, (str, Path)):
        stage1 = Checkpoint.load(stage1)
    if isinstance(resume, (str, Path)):
        resume = Checkpoint.load(resume)
    ds = ArrayDataset.from_manifest(manifest, "train")
    torch.manual_seed(cfg.seed + 1)
    model = build_model(cfg.model)
    if model.ssr is None:
        raise ConfigError("stage two needs model.use_ssr = true")
    model.stage1.load_state_dict(stage1.stage1)
    reference = group_checksum(model.stage1)
    if stage1.checksums.get("stage1") not in (None, reference):
        raise FreezeError("stage-one checkpoint does not match its recorded checksum")
    if resume is not None:
        model.ssr.load_state_dict(resume.ssr)
    for p in model.stage1.parameters():
        p.requires_grad_(False)
    model.stage1.eval()
    model.ssr.train()

    def forward(image):
        with torch.no_grad():
            s1 = model.stage1(image)
        return model.forward_stage2(image, s1)

    def verify(step, m):
        if on_step is not None:
            on_step(step, m)
        if verify_every and step % verify_every == 0 and group_checksum(m.stage1) != reference:
            raise FreezeError(f"stage-one parameters drifted during refinement training (step {step})")

    result = _run(model, cfg, ds, 2, model.ssr.parameters(), forward, out, resume, None, cfg.train.log_every, verify)
    if result.checkpoint.checksums["stage1"] != reference:
        raise FreezeError("stage-one parameters drifted during refinement training")
    return result


@torch.no_grad()
def dataset_loss(model: MoDOT, cfg: Config, ds: ArrayDataset, stage: int, batch_size: int = 8) -> dict[str, float]:
    """Mean tripartite loss over full images of ``ds`` (inference mode)."""
    model.eval()
    totals: dict[str, float] = {}
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        b = ds.tensors(idx)
        out = model(b["image"], stage=stage)
        bd = loss_from_config(out, b["depth"], b["ob"], b["valid"], cfg.loss)
        for k, v in bd.as_floats().items():
            if k != "side":
                totals[k] = totals.get(k, 0.0) + v * len(idx)
    return {k: v / len(ds) for k, v in totals.items()}
