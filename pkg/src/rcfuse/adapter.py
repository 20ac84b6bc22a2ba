"""Frozen-foundation feature adapter: inject backbone-derived spatial features
into a frozen vision transformer, run it, extract enriched multi-level token
features, and fuse them back into the visual stream.

The foundation network defaults to a small frozen transformer with fixed-seed
random weights; `load_foundation_weights` accepts externally supplied weights
with the same parameter layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeatureMap


@dataclass
class FoundationConfig:
    patch_size: int = 14
    depth: int = 6
    embed_dim: int = 96
    num_heads: int = 4
    mlp_ratio: float = 2.0
    input_hw: tuple = (224, 448)  # images are bilinearly resized to this
    tap_layers: tuple = (1, 2, 4, 5)  # 4 evenly spread layers, 0-based
    inject_layers: tuple = (1, 2, 4, 5)
    frozen: bool = True
    prior_channels: int = 32
    num_sample_points: int = 4  # K, deformable sampling points per token
    weight_seed: int = 1234

    def token_grid(self) -> tuple:
        h, w = self.input_hw
        if h % self.patch_size or w % self.patch_size:
            raise ValueError("input_hw must be divisible by patch_size")
        return h // self.patch_size, w // self.patch_size

    def validate(self):
        for name, layers in (("tap_layers", self.tap_layers),
                             ("inject_layers", self.inject_layers)):
            if list(layers) != sorted(set(layers)):
                raise ValueError(f"{name} must be strictly increasing")
            if any(l < 0 or l >= self.depth for l in layers):
                raise ValueError(f"{name} out of range for depth {self.depth}")
        if len(self.tap_layers) != 4:
            raise ValueError("exactly 4 tap layers are required")
        self.token_grid()


class TokenGrid:
    """(H_p * W_p, D) token matrix with its grid dims recorded."""

    def __init__(self, tokens: torch.Tensor, grid_hw: tuple):
        h, w = grid_hw
        if tokens.shape[0] != h * w:
            raise ValueError(f"token count {tokens.shape[0]} != {h}*{w}")
        self.tokens = tokens
        self.grid_hw = (h, w)

    def as_map(self) -> torch.Tensor:
        h, w = self.grid_hw
        return self.tokens.T.reshape(-1, h, w)


class TransformerBlock(nn.Module):
    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(),
                                 nn.Linear(hidden, dim))

    def forward(self, x):
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.norm2(x))


class FoundationStub(nn.Module):
    """Plain ViT over a patch grid (no class token). Weights come from a fixed
    seed so every instance is identical; frozen by default."""

    def __init__(self, cfg: FoundationConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        h_p, w_p = cfg.token_grid()
        gen = torch.Generator().manual_seed(cfg.weight_seed)
        self.patch_embed = nn.Conv2d(3, cfg.embed_dim, cfg.patch_size,
                                     stride=cfg.patch_size)
        self.pos_embed = nn.Parameter(torch.empty(h_p * w_p, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            [TransformerBlock(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio)
             for _ in range(cfg.depth)]
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        with torch.no_grad():
            for p in self.parameters():
                if p.dim() > 1:
                    fan = p.shape[-1] * (p.shape[-2] if p.dim() > 2 else 1)
                    p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(max(fan, 1)))
                else:
                    p.zero_()
            self.pos_embed.copy_(torch.randn(self.pos_embed.shape, generator=gen) * 0.02)
        if cfg.frozen:
            for p in self.parameters():
                p.requires_grad_(False)

    def tokenize(self, image: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(image.unsqueeze(0)).squeeze(0)  # (D, H_p, W_p)
        return x.flatten(1).T + self.pos_embed

    def forward(self, image: torch.Tensor, inject_fn=None) -> list:
        """Run all blocks; `inject_fn(layer_index, tokens)` is applied before
        each block when given. Returns tokens captured after tap layers."""
        cfg = self.cfg
        grid = cfg.token_grid()
        x = self.tokenize(image)
        taps = []
        for i, block in enumerate(self.blocks):
            if inject_fn is not None and i in cfg.inject_layers:
                x = inject_fn(i, x)
            x = block(x.unsqueeze(0)).squeeze(0)
            if i in cfg.tap_layers:
                taps.append(TokenGrid(self.norm(x), grid))
        return taps


def _cell_centers(h: int, w: int, dtype, device) -> torch.Tensor:
    """(h*w, 2) grid_sample coordinates of cell centers, align_corners=False."""
    ys = (torch.arange(h, dtype=dtype, device=device) + 0.5) / h * 2 - 1
    xs = (torch.arange(w, dtype=dtype, device=device) + 0.5) / w * 2 - 1
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1).reshape(-1, 2)


class Injector(nn.Module):
    """Single-head deformable attention from tokens into the spatial prior,
    gated by a learnable scalar (zero-initialized, so injection starts as the
    identity)."""

    def __init__(self, dim: int, prior_channels: int, num_points: int):
        super().__init__()
        self.num_points = num_points
        self.norm = nn.LayerNorm(dim)
        self.offset_head = nn.Linear(dim, num_points * 2)
        self.weight_head = nn.Linear(dim, num_points)
        self.value_proj = nn.Linear(prior_channels, dim)
        self.gate = nn.Parameter(torch.zeros(()))
        nn.init.zeros_(self.offset_head.weight)
        nn.init.zeros_(self.offset_head.bias)

    def forward(self, tokens: torch.Tensor, prior: torch.Tensor,
                grid_hw: tuple) -> torch.Tensor:
        h, w = grid_hw
        n, _ = tokens.shape
        k = self.num_points
        q = self.norm(tokens)
        refs = _cell_centers(h, w, tokens.dtype, tokens.device)  # (n, 2)
        offsets = self.offset_head(q).reshape(n, k, 2)
        weights = torch.softmax(self.weight_head(q), dim=-1)  # (n, k)
        coords = (refs.unsqueeze(1) + offsets).reshape(1, n, k, 2)
        sampled = F.grid_sample(
            prior.unsqueeze(0), coords, mode="bilinear",
            padding_mode="zeros", align_corners=False,
        )  # (1, C_p, n, k)
        sampled = sampled.squeeze(0).permute(1, 2, 0)  # (n, k, C_p)
        values = self.value_proj(sampled)  # (n, k, D)
        out = (weights.unsqueeze(-1) * values).sum(dim=1)
        return tokens + self.gate * out


class SpatialPrior(nn.Module):
    """Convolutional feature extractor producing spatial features aligned with
    the foundation token grid. Bias-free so a zero image yields a zero prior."""

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(3, channels, 3, stride=2, padding=1, bias=False),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1, bias=False),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1, bias=False),
        )

    def forward(self, image: torch.Tensor, grid_hw: tuple) -> torch.Tensor:
        x = self.convs(image.unsqueeze(0))
        x = F.interpolate(x, size=grid_hw, mode="bilinear", align_corners=False)
        return x.squeeze(0)


class Extractor(nn.Module):
    """Fuse the 4 tapped token grids (interpolation + convolution) conditioned
    on the spatial prior, and project to the fused-feature size."""

    def __init__(self, dim: int, prior_channels: int, out_channels: int,
                 out_hw: tuple, mid_channels: int = 32):
        super().__init__()
        self.out_hw = out_hw
        self.level_convs = nn.ModuleList(
            [nn.Conv2d(dim, mid_channels, 3, padding=1) for _ in range(4)]
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(4 * mid_channels + prior_channels, 2 * mid_channels, 3,
                      padding=1),
            nn.ReLU(),
            nn.Conv2d(2 * mid_channels, out_channels, 1),
        )

    def forward(self, taps: list, prior: torch.Tensor) -> torch.Tensor:
        maps = [conv(t.as_map().unsqueeze(0)) for conv, t in zip(self.level_convs, taps)]
        x = torch.cat(maps + [prior.unsqueeze(0)], dim=1)
        x = self.fuse(x)
        x = F.interpolate(x, size=self.out_hw, mode="bilinear", align_corners=False)
        return x.squeeze(0)


class FoundationAdapter(nn.Module):
    """inject -> foundation forward -> extract -> fuse, with scalar gates per
    inject layer and a scalar fusion weight, all zero-initialized so the whole
    adapter starts as an exact no-op on the visual stream."""

    def __init__(self, cfg: FoundationConfig, out_channels: int, out_hw: tuple):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.foundation = FoundationStub(cfg)
        self.prior = SpatialPrior(cfg.prior_channels)
        self.injectors = nn.ModuleDict(
            {
                str(layer): Injector(cfg.embed_dim, cfg.prior_channels,
                                     cfg.num_sample_points)
                for layer in cfg.inject_layers
            }
        )
        self.extractor = Extractor(cfg.embed_dim, cfg.prior_channels,
                                   out_channels, out_hw)
        self.fusion_weight = nn.Parameter(torch.zeros(()))

    @property
    def gates(self) -> dict:
        return {int(k): inj.gate for k, inj in self.injectors.items()}

    def compute_prior(self, image: torch.Tensor) -> torch.Tensor:
        img = F.interpolate(
            image.unsqueeze(0), size=self.cfg.input_hw, mode="bilinear",
            align_corners=False,
        ).squeeze(0)
        return self.prior(img, self.cfg.token_grid()), img

    def extract_features(self, image: torch.Tensor) -> torch.Tensor:
        """Run the full inject/forward/extract path; returns (C_img, H_f, W_f)."""
        prior, img = self.compute_prior(image)
        grid = self.cfg.token_grid()

        def inject_fn(layer, tokens):
            return self.injectors[str(layer)](tokens, prior, grid)

        taps = self.foundation(img, inject_fn=inject_fn)
        return self.extractor(taps, prior)

    def forward(self, image: torch.Tensor, backbone_feat: FeatureMap) -> FeatureMap:
        extracted = self.extract_features(image)
        if extracted.shape != backbone_feat.data.shape:
            raise ValueError(
                f"shape mismatch: extracted {tuple(extracted.shape)} vs "
                f"backbone {tuple(backbone_feat.data.shape)}"
            )
        fused = backbone_feat.data + self.fusion_weight * extracted
        return FeatureMap(fused, backbone_feat.stride)


def load_foundation_weights(adapter: FoundationAdapter, arrays: dict):
    """Load externally supplied foundation weights (name -> array), matching
    the stub's state-dict layout. Frozen status is preserved."""
    state = adapter.foundation.state_dict()
    for name, value in arrays.items():
        if name not in state:
            raise KeyError(f"unknown foundation parameter {name}")
        t = torch.as_tensor(value, dtype=state[name].dtype)
        if t.shape != state[name].shape:
            raise ValueError(f"shape mismatch for {name}")
        state[name] = t
    adapter.foundation.load_state_dict(state)
