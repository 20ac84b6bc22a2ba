"""Radar encoders: pillar-based sparse encoding of point sweeps into a BEV
grid, parameter-free 2D sinusoidal positional encoding, and a U-Net-style
dense encoder with self-attention at the bottleneck.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeatureMap
from .scene import ConfigurationError

POINT_FEATURE_DIM = 7  # x, y, z, v_comp, t_offset, dx-to-cell-center, dy


@dataclass
class PillarConfig:
    bev_extent: tuple = (-32.0, 32.0, -32.0, 32.0)
    grid_hw: tuple = (64, 64)  # (H_r, W_r); paper-scale default is 128x128
    hidden: int = 32
    out_channels: int = 32  # C_r
    dense_out_channels: int = 64  # C_out of the dense encoder

    def validate(self):
        x0, x1, y0, y1 = self.bev_extent
        if x1 <= x0 or y1 <= y0:
            raise ConfigurationError("bev_extent must span positive area")
        h, w = self.grid_hw
        for d in (h, w):
            if d < 8 or (d & (d - 1)) != 0:
                raise ConfigurationError("grid dims must be powers of two >= 8")

    def cell_size(self) -> tuple:
        x0, x1, y0, y1 = self.bev_extent
        h, w = self.grid_hw
        return (x1 - x0) / w, (y1 - y0) / h  # (dx, dy)


class RadarBEV:
    """C_r x H_r x W_r features plus a boolean occupancy mask; cells with no
    points are zero / False."""

    def __init__(self, data: torch.Tensor, occupancy: torch.Tensor):
        self.data = data
        self.occupancy = occupancy


def pillarize(points: torch.Tensor, cfg: PillarConfig):
    """Assign points to BEV cells (half-open cells, row 0 at y_min).

    Returns (features (M, 7), cell_index (M,) flat row*W+col) for in-extent
    points; out-of-extent points are dropped.
    """
    cfg.validate()
    x0, x1, y0, y1 = cfg.bev_extent
    h, w = cfg.grid_hw
    dx, dy = cfg.cell_size()
    if points.numel() == 0:
        empty = points.new_zeros((0, POINT_FEATURE_DIM))
        return empty, torch.zeros(0, dtype=torch.long)
    x, y = points[:, 0], points[:, 1]
    keep = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
    pts = points[keep]
    col = torch.div(pts[:, 0] - x0, dx, rounding_mode="floor").long()
    row = torch.div(pts[:, 1] - y0, dy, rounding_mode="floor").long()
    cx = x0 + (col.to(pts.dtype) + 0.5) * dx
    cy = y0 + (row.to(pts.dtype) + 0.5) * dy
    feats = torch.cat(
        [pts[:, :5], (pts[:, 0] - cx).unsqueeze(1), (pts[:, 1] - cy).unsqueeze(1)],
        dim=1,
    )
    return feats, row * w + col


class SparsePillarEncoder(nn.Module):
    """Point-wise MLP followed by per-cell max-pool scatter into the BEV grid."""

    def __init__(self, cfg: PillarConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.mlp = nn.Sequential(
            nn.Linear(POINT_FEATURE_DIM, cfg.hidden),
            nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.out_channels),
        )

    def forward(self, points: torch.Tensor) -> RadarBEV:
        h, w = self.cfg.grid_hw
        c = self.cfg.out_channels
        feats, idx = pillarize(points, self.cfg)
        param = next(self.parameters())
        grid = param.new_zeros((h * w, c))
        occ = torch.zeros(h * w, dtype=torch.bool)
        if feats.shape[0] > 0:
            enc = self.mlp(feats.to(param.dtype))  # (M, C_r)
            pooled = param.new_full((h * w, c), float("-inf"))
            pooled = pooled.scatter_reduce(
                0, idx.unsqueeze(1).expand(-1, c), enc, reduce="amax",
                include_self=True,
            )
            occ[idx] = True
            grid = torch.where(occ.unsqueeze(1), pooled, grid)
        return RadarBEV(grid.T.reshape(c, h, w), occ.reshape(h, w))


def positional_encoding_2d(h: int, w: int, c: int, dtype=torch.float32,
                           device=None) -> torch.Tensor:
    """Parameter-free sinusoidal encoding (C, H, W): first half of channels
    encodes the row position, second half the column, sin/cos interleaved."""
    if c % 4 != 0:
        raise ConfigurationError(f"channel count must be divisible by 4, got {c}")
    half = c // 2
    freq = torch.exp(
        torch.arange(0, half, 2, dtype=dtype, device=device)
        * (-math.log(10000.0) / half)
    )
    rows = torch.arange(h, dtype=dtype, device=device).unsqueeze(1) * freq  # (H, half/2)
    cols = torch.arange(w, dtype=dtype, device=device).unsqueeze(1) * freq
    pe = torch.zeros(c, h, w, dtype=dtype, device=device)
    pe[0:half:2] = torch.sin(rows).T.unsqueeze(2).expand(-1, -1, w)
    pe[1:half:2] = torch.cos(rows).T.unsqueeze(2).expand(-1, -1, w)
    pe[half::2] = torch.sin(cols).T.unsqueeze(1).expand(-1, h, -1)
    pe[half + 1 :: 2] = torch.cos(cols).T.unsqueeze(1).expand(-1, h, -1)
    return pe


class BottleneckSelfAttention(nn.Module):
    """Multi-head self-attention over bottleneck cells with 2D positional
    encoding added to queries and keys (not values); residual output."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c, h, w = x.shape
        pe = positional_encoding_2d(h, w, c, dtype=x.dtype, device=x.device)
        tokens = x.flatten(1).T  # (h*w, c)
        pe_t = pe.flatten(1).T
        q = self.q(tokens + pe_t)
        k = self.k(tokens + pe_t)
        v = self.v(tokens)
        d = c // self.heads
        n = h * w

        def split(t):
            return t.reshape(n, self.heads, d).permute(1, 0, 2)

        attn = torch.softmax(
            split(q) @ split(k).transpose(1, 2) / math.sqrt(d), dim=-1
        )
        mixed = (attn @ split(v)).permute(1, 0, 2).reshape(n, c)
        return x + self.out(mixed).T.reshape(c, h, w)


def _conv(c_in, c_out, stride=1):
    return nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1,
                     padding_mode="replicate")


class DenseRadarEncoder(nn.Module):
    """U-Net over the radar BEV map: three strided-conv halvings, bottleneck
    self-attention, then upsampling with skip connections back to full
    resolution. Replicate padding keeps constant inputs spatially constant."""

    def __init__(self, cfg: PillarConfig, heads: int = 4):
        super().__init__()
        cfg.validate()
        h, w = cfg.grid_hw
        if h % 8 or w % 8:
            raise ConfigurationError("grid dims must admit 3 halvings")
        self.cfg = cfg
        c_r = cfg.out_channels
        c1, c2, c3 = 2 * c_r, 4 * c_r, 8 * c_r
        self.down1 = nn.Sequential(_conv(c_r, c1, 2), nn.ReLU())
        self.down2 = nn.Sequential(_conv(c1, c2, 2), nn.ReLU())
        self.down3 = nn.Sequential(_conv(c2, c3, 2), nn.ReLU())
        self.attn = BottleneckSelfAttention(c3, heads)
        self.up3 = nn.Sequential(_conv(c3 + c2, c2), nn.ReLU())
        self.up2 = nn.Sequential(_conv(c2 + c1, c1), nn.ReLU())
        self.up1 = _conv(c1 + c_r, cfg.dense_out_channels)

    def forward(self, bev: RadarBEV) -> FeatureMap:
        x = bev.data.unsqueeze(0)
        b1 = self.down1(x)
        b2 = self.down2(b1)
        b3 = self.down3(b2)
        bf = self.attn(b3.squeeze(0)).unsqueeze(0)

        def up(t, size):
            return F.interpolate(t, size=size, mode="bilinear", align_corners=False)

        y = self.up3(torch.cat([up(bf, b2.shape[-2:]), b2], dim=1))
        y = self.up2(torch.cat([up(y, b1.shape[-2:]), b1], dim=1))
        y = self.up1(torch.cat([up(y, x.shape[-2:]), x], dim=1))
        return FeatureMap(y.squeeze(0), stride=1)
