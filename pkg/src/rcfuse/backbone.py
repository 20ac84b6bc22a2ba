"""Desk-scale residual image backbone and neck.

A 4-stage residual CNN (strides 4/8/16/32, narrow channels) stands in for
ResNet18; the neck is a 1x1 projection of the stride-16 level plus bilinear
resize to the configured fused-feature size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class BackboneConfig:
    stage_channels: tuple = (8, 16, 32, 64)
    out_channels: int = 64  # C_img, the fused feature width
    feat_hw: tuple = (16, 44)  # (H_f, W_f) emitted by the neck


class FeatureMap:
    """Dense C x H x W feature grid with its input stride."""

    def __init__(self, data: torch.Tensor, stride: int):
        if data.dim() != 3:
            raise ValueError(f"FeatureMap expects (C, H, W), got {tuple(data.shape)}")
        self.data = data
        self.stride = stride

    @property
    def shape(self):
        return tuple(self.data.shape)


class ResidualBlock(nn.Module):
    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(4, c_out), c_out)
        self.norm2 = nn.GroupNorm(min(4, c_out), c_out)
        self.short = (
            nn.Conv2d(c_in, c_out, 1, stride=stride)
            if stride != 1 or c_in != c_out
            else nn.Identity()
        )

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.short(x))


class VisualBackbone(nn.Module):
    """Image (3, H, W) -> pyramid of FeatureMaps at strides 4/8/16/32."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.stage_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, ch[0], 3, stride=2, padding=1),
            nn.GroupNorm(min(4, ch[0]), ch[0]),
            nn.ReLU(),
            nn.Conv2d(ch[0], ch[0], 3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.stages = nn.ModuleList(
            [
                ResidualBlock(ch[0], ch[0], stride=1),
                ResidualBlock(ch[0], ch[1], stride=2),
                ResidualBlock(ch[1], ch[2], stride=2),
                ResidualBlock(ch[2], ch[3], stride=2),
            ]
        )

    def forward(self, image: torch.Tensor) -> list:
        """Returns the pyramid as a list of FeatureMaps, strides increasing."""
        if image.dim() != 3 or image.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) image, got {tuple(image.shape)}")
        x = self.stem(image.unsqueeze(0))
        levels = []
        stride = 4
        for stage in self.stages:
            x = stage(x)
            levels.append(FeatureMap(x.squeeze(0), stride))
            stride *= 2
        return levels


class Neck(nn.Module):
    """Project the stride-16 pyramid level and resize to (H_f, W_f)."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Conv2d(cfg.stage_channels[2], cfg.out_channels, 1)

    def forward(self, pyramid: list) -> FeatureMap:
        level = pyramid[2]
        x = self.proj(level.data.unsqueeze(0))
        h, w = self.cfg.feat_hw
        x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
        return FeatureMap(x.squeeze(0), stride=level.stride)
