"""Shared hierarchical encoder: four levels at strides 4/8/16/32 with widths C, 2C, 4C, 8C."""
from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ShapeError

IMAGE_MEAN = (0.485, 0.456, 0.406)
IMAGE_STD = (0.229, 0.224, 0.225)


def normalize_image(rgb: torch.Tensor) -> torch.Tensor:
    """uint8-range (B, 3, H, W) -> per-channel standardized floats."""
    mean = rgb.new_tensor(IMAGE_MEAN).view(1, 3, 1, 1)
    std = rgb.new_tensor(IMAGE_STD).view(1, 3, 1, 1)
    return (rgb / 255.0 - mean) / std


def check_divisible(h: int, w: int, multiple: int = 32) -> None:
    if h % multiple or w % multiple:
        raise ShapeError(f"input sides must be multiples of {multiple}, got {h}x{w}")


def fit_window(side: int, window: int) -> int:
    """Largest window length <= ``window`` that tiles ``side`` exactly."""
    for n in range(min(window, side), 0, -1):
        if side % n == 0:
            return n
    return 1


def window_partition(x: torch.Tensor, wh: int, ww: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, wh * ww, C)."""
    B, H, W, C = x.shape
    if H % wh or W % ww:
        raise ShapeError(f"window {wh}x{ww} does not tile a {H}x{W} feature map")
    x = x.view(B, H // wh, wh, W // ww, ww, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(-1, wh * ww, C)


def window_reverse(windows: torch.Tensor, wh: int, ww: int, B: int, H: int, W: int) -> torch.Tensor:
    C = windows.shape[-1]
    x = windows.view(B, H // wh, W // ww, wh, ww, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, H, W, C)


def attend(q, k, v, heads: int):
    """Multi-head scaled dot-product attention over token sets (N, L, C); returns (out, weights)."""
    N, Lq, C = q.shape
    Lk = k.shape[1]
    d = C // heads
    q = q.view(N, Lq, heads, d).transpose(1, 2)
    k = k.view(N, Lk, heads, d).transpose(1, 2)
    v = v.view(N, Lk, heads, d).transpose(1, 2)
    weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
    out = (weights @ v).transpose(1, 2).reshape(N, Lq, C)
    return out, weights


class MixFFN(nn.Module):
    """Token MLP with a depthwise 3x3 conv between the two projections (gives the block positional cues)."""

    def __init__(self, dim: int, ratio: float = 2.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):  # (B, H, W, C)
        x = self.fc1(x)
        x = self.dw(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        return self.fc2(F.gelu(x))


class WindowBlock(nn.Module):
    """Pre-norm transformer block with non-overlapping window self-attention."""

    def __init__(self, dim: int, heads: int, window: int, mlp_ratio: float = 2.0):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"width {dim} not divisible by {heads} heads")
        self.heads, self.window = heads, window
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MixFFN(dim, mlp_ratio)

    def forward(self, x):  # (B, H, W, C)
        B, H, W, C = x.shape
        wh, ww = fit_window(H, self.window), fit_window(W, self.window)
        tokens = window_partition(self.norm1(x), wh, ww)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        out, _ = attend(q, k, v, self.heads)
        x = x + window_reverse(self.proj(out), wh, ww, B, H, W)
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x):  # (B, H, W, C) -> (B, H/2, W/2, 2C)
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1)
        return self.reduce(self.norm(x))


class WindowEncoder(nn.Module):
    def __init__(self, base_channels=16, window_size=4, depths=(2, 2, 2, 2), heads=(1, 2, 4, 8), mlp_ratio=2.0):
        super().__init__()
        C = base_channels
        self.channels = [C, 2 * C, 4 * C, 8 * C]
        self.window_size = window_size
        self.patch_embed = nn.Conv2d(3, C, kernel_size=4, stride=4)
        self.embed_norm = nn.LayerNorm(C)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        self.out_norms = nn.ModuleList()
        for i, dim in enumerate(self.channels):
            self.stages.append(nn.Sequential(*[WindowBlock(dim, heads[i], window_size, mlp_ratio)
                                               for _ in range(depths[i])]))
            self.out_norms.append(nn.LayerNorm(dim))
            if i < 3:
                self.merges.append(PatchMerging(dim))

    def forward(self, image):
        check_divisible(*image.shape[-2:])
        x = self.embed_norm(self.patch_embed(image).permute(0, 2, 3, 1))
        levels = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            levels.append(self.out_norms[i](x).permute(0, 3, 1, 2).contiguous())
            if i < 3:
                x = self.merges[i](x)
        return levels


def _conv_bn(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.GroupNorm(1, cout), nn.GELU())


class ConvEncoder(nn.Module):
    """Pure-convolution stand-in with the same pyramid shapes; for fast pipeline tests."""

    def __init__(self, base_channels=16, **_):
        super().__init__()
        C = base_channels
        self.channels = [C, 2 * C, 4 * C, 8 * C]
        self.window_size = None
        self.stem = nn.Sequential(_conv_bn(3, C, 2), _conv_bn(C, C, 2))
        self.stages = nn.ModuleList([_conv_bn(C, C)] + [
            nn.Sequential(_conv_bn(self.channels[i - 1], self.channels[i], 2), _conv_bn(self.channels[i], self.channels[i]))
            for i in range(1, 4)
        ])

    def forward(self, image):
        check_divisible(*image.shape[-2:])
        x = self.stem(image)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return levels


def build_encoder(cfg) -> nn.Module:
    if cfg.kind == "conv":
        return ConvEncoder(cfg.base_channels)
    return WindowEncoder(cfg.base_channels, cfg.window_size, tuple(cfg.depths), tuple(cfg.heads), cfg.mlp_ratio)
