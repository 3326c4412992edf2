"""Two-stage joint depth / occlusion-boundary network."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError
from .casm import CASM, PlainBridge
from .encoder import build_encoder, check_divisible
from .heads import EIP, PPM, SSR, DepthDecoderBlock, OBDecoderBlock, resize


@dataclass
class Stage1Output:
    depth: torch.Tensor  # (B, 1, H, W) meters
    depth_logit: torch.Tensor
    ob_logit: torch.Tensor | None = None  # final map, (B, 1, H, W)
    side_logits: list[torch.Tensor] = field(default_factory=list)
    f_depth_last: torch.Tensor | None = None
    f_ob_last: torch.Tensor | None = None

    @property
    def ob_prob_final(self):
        return None if self.ob_logit is None else torch.sigmoid(self.ob_logit)

    @property
    def ob_prob(self):
        return self.ob_prob_final

    @property
    def ob_side_probs(self):
        return [torch.sigmoid(s) for s in self.side_logits]

    @property
    def ob_logits(self):
        """Every supervised OB map: final first, then the side outputs."""
        return [] if self.ob_logit is None else [self.ob_logit, *self.side_logits]


@dataclass
class Stage2Output:
    depth: torch.Tensor
    depth_logit: torch.Tensor
    ob_logit: torch.Tensor | None = None

    @property
    def ob_prob(self):
        return None if self.ob_logit is None else torch.sigmoid(self.ob_logit)

    @property
    def ob_logits(self):
        return [] if self.ob_logit is None else [self.ob_logit]


def depth_from_logit(logit, max_depth: float):
    return (max_depth * torch.sigmoid(logit)).clamp_min(1e-6 * max_depth)


class Stage1(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.max_depth = cfg.max_depth
        self.joint = cfg.tasks == "joint"
        self.use_casm = cfg.use_casm and self.joint
        self.use_eip = cfg.use_eip and self.joint
        enc = cfg.encoder
        self.encoder = build_encoder(enc)
        ch = self.encoder.channels
        window = enc.window_size
        self.ppm = PPM(ch[3], ch[3])
        self.depth_blocks = nn.ModuleList([
            DepthDecoderBlock(ch[i], ch[i], enc.heads[i], window, enc.mlp_ratio) for i in range(4)])
        bridge_kw = dict(reduction=cfg.casm.reduction, strip_kernels=tuple(cfg.casm.strip_kernels),
                         square_branches=cfg.casm.square_branches)
        if self.use_casm:
            self.bridges = nn.ModuleList([CASM(ch[i], ch[i], ch[i] // 2, **bridge_kw) for i in range(4)])
        else:
            self.bridges = nn.ModuleList([
                PlainBridge(ch[i], ch[i] if self.joint else 0, ch[i] // 2) for i in range(4)])
        self.depth_head = nn.Conv2d(ch[0] // 2, 1, 1)
        if self.joint:
            widths = [ch[3], ch[2], ch[1], ch[0], ch[0] // 2]
            self.ob_blocks = nn.ModuleList([OBDecoderBlock(w) for w in widths])
            last = ch[0] // 4
            if self.use_eip:
                self.eip = EIP(cfg.eip_channels, last, cfg.casm.reduction)
            else:
                self.ob_head = nn.Sequential(nn.Conv2d(last, 8, 3, padding=1), nn.ReLU(), nn.Conv2d(8, 1, 1))

    def forward(self, image: torch.Tensor) -> Stage1Output:
        H, W = image.shape[-2:]
        check_divisible(H, W)
        enc = self.encoder(image)
        f_in = self.ppm(enc[3])
        ob_path = None
        side_logits = []
        if self.joint:
            ob_path, side = self.ob_blocks[0](enc[3], (H, W))
            side_logits.append(side)
        for i in (3, 2, 1, 0):
            f_d = self.depth_blocks[i](f_in, enc[i])
            f_in, f_ob = self.bridges[i](f_d, enc[i] if self.joint else None)
            if self.joint:
                ob_path, side = self.ob_blocks[4 - i](ob_path + f_ob, (H, W))
                side_logits.append(side)
        f_depth_last = f_in
        depth_logit = self.depth_head(resize(f_depth_last, (H, W)))
        out = Stage1Output(depth_from_logit(depth_logit, self.max_depth), depth_logit,
                           f_depth_last=f_depth_last)
        if self.joint:
            out.ob_logit = self.eip(image, ob_path) if self.use_eip else self.ob_head(ob_path)
            out.side_logits = side_logits
            out.f_ob_last = ob_path
        return out


class MoDOT(nn.Module):
    """Stage one plus the optional refinement stage; parameters group as ``stage1.*`` / ``ssr.*``."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.stage1 = Stage1(cfg)
        self.ssr = None
        if cfg.use_ssr:
            if cfg.tasks != "joint":
                raise ConfigError("the refinement stage needs the joint (depth + OB) model")
            ch0 = self.stage1.encoder.channels[0]
            self.ssr = SSR(ch0 // 2, ch0 // 4, cfg.ssr_channels, cfg.ssr_common_channels, cfg.casm.reduction,
                           tuple(cfg.casm.strip_kernels), cfg.casm.square_branches)

    def forward_stage2(self, image: torch.Tensor, s1: Stage1Output) -> Stage2Output:
        if self.ssr is None:
            raise ConfigError("model was built without the refinement stage (model.use_ssr = false)")
        depth_logit, ob_logit = self.ssr(image, s1.f_depth_last, s1.f_ob_last, s1.depth_logit, s1.ob_logit)
        return Stage2Output(depth_from_logit(depth_logit, self.stage1.max_depth), depth_logit, ob_logit)

    def forward(self, image: torch.Tensor, stage: int = 1):
        s1 = self.stage1(image)
        if stage == 1:
            return s1
        return self.forward_stage2(image, s1)


def build_model(model_cfg) -> MoDOT:
    return MoDOT(model_cfg)


def pad_to_multiple(image: torch.Tensor, multiple: int = 32):
    """Symmetric replicate padding so both sides divide ``multiple``; returns (padded, (top, bottom, left, right))."""
    H, W = image.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    pads = (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    if ph or pw:
        image = F.pad(image, (pads[2], pads[3], pads[0], pads[1]), mode="replicate")
    return image, pads


def unpad(x: torch.Tensor, pads) -> torch.Tensor:
    top, bottom, left, right = pads
    H, W = x.shape[-2:]
    return x[..., top: H - bottom, left: W - right]
