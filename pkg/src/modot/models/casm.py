"""Cross-attention strip module.

Depth and OB features are upsampled 2x and projected to a common width.
Channel attention computed on each stream re-weights the *other* stream,
and a bank of strip convolutions fuses the concatenated pair back into the
depth stream.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError


def upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class ChannelAttention(nn.Module):
    """Squeeze-excitation weights: global pool -> C/r -> ReLU -> C -> sigmoid. Returns (B, C)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction ratio {reduction}")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))


class MSSFuse(nn.Module):
    """Parallel 1xk / kx1 strip convolutions plus square 3x3 branches, concatenated and fused by 1x1."""

    def __init__(self, in_channels: int, out_channels: int, strip_kernels=(7, 11), square_branches: int = 1):
        super().__init__()
        branches = []
        self.kinds = []
        for k in strip_kernels:
            branches.append(nn.Conv2d(in_channels, out_channels, (1, k), padding=(0, k // 2)))
            branches.append(nn.Conv2d(in_channels, out_channels, (k, 1), padding=(k // 2, 0)))
            self.kinds += [f"1x{k}", f"{k}x1"]
        for _ in range(square_branches):
            branches.append(nn.Conv2d(in_channels, out_channels, 3, padding=1))
            self.kinds.append("3x3")
        self.branches = nn.ModuleList(branches)
        self.fuse = nn.Conv2d(out_channels * len(branches), out_channels, 1)

    def branch_outputs(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Pre-fusion responses, one per branch, in ``self.kinds`` order."""
        return [b(x) for b in self.branches]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fuse(F.relu(torch.cat(self.branch_outputs(x), dim=1)))


class CASM(nn.Module):
    def __init__(self, depth_channels: int, ob_channels: int, common_channels: int, reduction: int = 4,
                 strip_kernels=(7, 11), square_branches: int = 1):
        super().__init__()
        self.out_channels = common_channels
        self.proj_d = nn.Conv2d(depth_channels, common_channels, 1)
        self.proj_ob = nn.Conv2d(ob_channels, common_channels, 1)
        self.att_d = ChannelAttention(common_channels, reduction)
        self.att_ob = ChannelAttention(common_channels, reduction)
        self.mss = MSSFuse(2 * common_channels, common_channels, strip_kernels, square_branches)

    def trace(self, f_d: torch.Tensor, f_ob: torch.Tensor) -> dict[str, torch.Tensor]:
        if f_d.shape[-2:] != f_ob.shape[-2:]:
            raise ShapeError(f"CASM inputs differ spatially: {tuple(f_d.shape[-2:])} vs {tuple(f_ob.shape[-2:])}")
        # 1x1 projection commutes with bilinear upsampling; projecting first is cheaper
        fd = upsample2(self.proj_d(f_d))
        fob = upsample2(self.proj_ob(f_ob))
        w_d, w_ob = self.att_d(fd), self.att_ob(fob)
        f_d_ob = fd * w_ob[:, :, None, None]
        f_ob_d = fob * w_d[:, :, None, None]
        f_mssf = self.mss(torch.cat([fd, fob], dim=1))
        return {"f_d": fd, "f_ob": fob, "w_d": w_d, "w_ob": w_ob, "f_d_ob": f_d_ob, "f_ob_d": f_ob_d,
                "f_mssf": f_mssf, "out_d": f_mssf + f_d_ob, "out_ob": f_ob_d}

    def forward(self, f_d: torch.Tensor, f_ob: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        t = self.trace(f_d, f_ob)
        return t["out_d"], t["out_ob"]


class PlainBridge(nn.Module):
    """CASM ablation: each stream is upsampled and projected independently, no cross-talk."""

    def __init__(self, depth_channels: int, ob_channels: int, common_channels: int, **_):
        super().__init__()
        self.out_channels = common_channels
        self.proj_d = nn.Conv2d(depth_channels, common_channels, 1)
        self.proj_ob = nn.Conv2d(ob_channels, common_channels, 1) if ob_channels else None

    def forward(self, f_d, f_ob=None):
        out_d = upsample2(self.proj_d(f_d))
        out_ob = upsample2(self.proj_ob(f_ob)) if self.proj_ob is not None and f_ob is not None else None
        return out_d, out_ob
