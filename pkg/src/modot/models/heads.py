"""Decoder-side building blocks: PPM, window cross-attention depth block, OB block, EIP, SSR."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ShapeError
from .casm import CASM, ChannelAttention
from .encoder import attend, fit_window, window_partition, window_reverse


def resize(x: torch.Tensor, size) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


class PPM(nn.Module):
    """Pyramid pooling: average-pool to each grid, project, upsample, concatenate with the input, fuse."""

    def __init__(self, in_channels: int, out_channels: int, bins=(1, 2, 3, 6)):
        super().__init__()
        self.bins = tuple(bins)
        branch = max(in_channels // 4, 1)
        self.projs = nn.ModuleList([nn.Conv2d(in_channels, branch, 1) for _ in self.bins])
        self.fuse = nn.Conv2d(in_channels + branch * len(self.bins), out_channels, 3, padding=1)

    def pooled(self, x: torch.Tensor) -> list[torch.Tensor]:
        # adaptive bins overlap when the grid exceeds the map side, so tiny maps stay valid
        return [F.adaptive_avg_pool2d(x, b) for b in self.bins]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        feats = [x] + [resize(F.relu(p(pool)), size) for p, pool in zip(self.projs, self.pooled(x))]
        return F.relu(self.fuse(torch.cat(feats, dim=1)))


class DepthDecoderBlock(nn.Module):
    """Window cross-attention: queries from the decoder path, keys/values from the encoder skip."""

    def __init__(self, in_channels: int, dim: int, heads: int = 1, window: int = 4, mlp_ratio: float = 2.0):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"width {dim} not divisible by {heads} heads")
        self.heads, self.window = heads, window
        self.in_proj = nn.Conv2d(in_channels, dim, 1)
        self.norm_q = nn.LayerNorm(dim)
        self.norm_k = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim, bias=False)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, int(dim * mlp_ratio)), nn.GELU(), nn.Linear(int(dim * mlp_ratio), dim))

    def _align(self, f_in, skip):
        return self.in_proj(resize(f_in, skip.shape[-2:])).permute(0, 2, 3, 1)

    def attention(self, x, skip):
        """x: (B, H, W, C) queries source; skip: (B, C, H, W). Returns (update, weights)."""
        B, H, W, C = x.shape
        s = skip.permute(0, 2, 3, 1)
        wh, ww = fit_window(H, self.window), fit_window(W, self.window)
        q = self.q(window_partition(self.norm_q(x), wh, ww))
        k = self.k(window_partition(self.norm_k(s), wh, ww))
        v = self.v(window_partition(s, wh, ww))
        out, weights = attend(q, k, v, self.heads)
        return window_reverse(self.out(out), wh, ww, B, H, W), weights

    def _ffn(self, x):
        return x + self.mlp(self.norm2(x))

    def residual_path(self, f_in, skip):
        """The block with its attention branch removed."""
        return self._ffn(self._align(f_in, skip)).permute(0, 3, 1, 2)

    def forward(self, f_in, skip):
        if skip.shape[1] != self.in_proj.out_channels:
            raise ShapeError(f"skip has {skip.shape[1]} channels, block width is {self.in_proj.out_channels}")
        x = self._align(f_in, skip)
        update, _ = self.attention(x, skip)
        return self._ffn(x + update).permute(0, 3, 1, 2).contiguous()


class OBDecoderBlock(nn.Module):
    """Halve channels (1x1), two 3x3 convs, 2x upsample; a 1x1 side head supervises each block."""

    def __init__(self, in_channels: int):
        super().__init__()
        if in_channels % 2:
            raise ConfigError(f"OB decoder block needs an even channel count, got {in_channels}")
        c = in_channels // 2
        self.out_channels = c
        self.reduce = nn.Conv2d(in_channels, c, 1)
        self.conv1 = nn.Conv2d(c, c, 3, padding=1)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.side = nn.Conv2d(c, 1, 1)

    def forward(self, x, out_size=None):
        x = F.relu(self.reduce(x))
        x = F.relu(self.conv2(F.relu(self.conv1(x))))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        side = self.side(x)
        if out_size is not None:
            side = resize(side, out_size)
        return x, side


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        stats = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(stats))


class EIP(nn.Module):
    """Full-resolution image path: conv stem, parallel spatial / channel attention, 1x1 fusion,
    then decoding merged with the last OB decoder features."""

    def __init__(self, channels: int = 16, skip_channels: int = 0, reduction: int = 4):
        super().__init__()
        self.skip_channels = skip_channels
        self.stem = nn.Sequential(nn.Conv2d(3, channels, 3, padding=1), nn.ReLU(),
                                  nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU())
        self.spatial = SpatialAttention(7)
        self.channel = ChannelAttention(channels, reduction)
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.decode = nn.Sequential(nn.Conv2d(channels + skip_channels, channels, 3, padding=1), nn.ReLU(),
                                    nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU(),
                                    nn.Conv2d(channels, 1, 1))

    def spatial_map(self, image):
        return self.spatial(self.stem(image))

    def forward(self, image, skip=None):
        if self.skip_channels and skip is None:
            raise ConfigError("EIP was built with OB-decoder skip features but none were given")
        feat = self.stem(image)
        sa = feat * self.spatial(feat)
        ca = feat * self.channel(feat)[:, :, None, None]
        x = F.relu(self.fuse(torch.cat([sa, ca], dim=1)))
        if skip is not None:
            x = torch.cat([x, resize(skip, x.shape[-2:])], dim=1)
        return self.decode(x)


class SSR(nn.Module):
    """Second-stage refinement at full resolution.

    The heads predict residual logits on top of the stage-one maps and start
    at zero, so an untrained refinement stage reproduces stage one.
    """

    def __init__(self, depth_channels: int, ob_channels: int, stem_channels: int = 16, common_channels: int = 16,
                 reduction: int = 4, strip_kernels=(7, 11), square_branches: int = 1):
        super().__init__()
        s = stem_channels
        self.stem = nn.Sequential(nn.Conv2d(3, s, 3, padding=1), nn.ReLU(), nn.Conv2d(s, s, 3, padding=1), nn.ReLU())
        self.casm = CASM(depth_channels, ob_channels, common_channels, reduction, strip_kernels, square_branches)
        width = 2 * common_channels + s
        self.depth_head = nn.Sequential(nn.Conv2d(width, s, 3, padding=1), nn.ReLU(), nn.Conv2d(s, 1, 1))
        self.ob_head = nn.Sequential(nn.Conv2d(width, s, 3, padding=1), nn.ReLU(), nn.Conv2d(s, 1, 1))
        for head in (self.depth_head, self.ob_head):
            nn.init.zeros_(head[-1].weight)
            nn.init.zeros_(head[-1].bias)

    def forward(self, image, f_depth_last, f_ob_last, depth_logit, ob_logit):
        size = image.shape[-2:]
        # OB features come at full resolution; bring them to the depth features' grid
        f_ob = F.adaptive_avg_pool2d(f_ob_last, f_depth_last.shape[-2:])
        d, ob = self.casm(f_depth_last, f_ob)
        feat = torch.cat([resize(d, size), resize(ob, size), self.stem(image)], dim=1)
        return depth_logit + self.depth_head(feat), ob_logit + self.ob_head(feat)
