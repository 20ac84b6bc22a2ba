"""Sequential two-stage query decoder: object queries with 2D/3D positional
embeddings refined in a cascaded radar-stage -> camera-stage loop, additive
reference-point updates in logit space, temporal memory propagation, and
classification/regression heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeatureMap
from .radar import positional_encoding_2d
from .scene import Box3D

NUM_ATTRIBUTES = 2  # stationary / moving


@dataclass
class DecoderConfig:
    embed_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    num_queries: int = 64  # paper-scale default is 900
    layers_train: int = 6
    layers_infer: int = 3
    num_classes: int = 4
    memory_capacity: int = 64  # paper-scale default is 512
    memory_propagated: int = 16  # paper-scale default is 128
    bev_extent: tuple = (-32.0, 32.0, -32.0, 32.0)
    z_range: tuple = (-3.0, 5.0)
    anchor_size: tuple = (3.0, 1.5, 1.5)
    stage_order: tuple = ("radar", "camera")  # config switch; radar first
    num_pos_freqs: int = 8
    pe_channels: int = 32  # sinusoidal channels for BEV key positions

    def validate(self):
        if self.layers_infer > self.layers_train:
            raise ValueError("layers_infer must be <= layers_train")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must divide by num_heads")


def inverse_sigmoid(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    x = x.clamp(eps, 1.0 - eps)
    return torch.log(x / (1.0 - x))


def sine_features(coords: torch.Tensor, num_freqs: int) -> torch.Tensor:
    """(N, d) coordinates -> (N, d * 2 * num_freqs) sinusoidal features."""
    freqs = (2.0 ** torch.arange(num_freqs, dtype=coords.dtype,
                                 device=coords.device)) * math.pi
    args = coords.unsqueeze(-1) * freqs  # (N, d, F)
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1).flatten(1)


class Attention(nn.Module):
    """Multi-head attention with separate q/k/v inputs; exposes the averaged
    attention weights so tests can check row normalization."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.dim = dim
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, q_in, k_in, v_in, return_weights=False):
        nq, nk = q_in.shape[0], k_in.shape[0]
        d = self.dim // self.heads

        def split(t, n):
            return t.reshape(n, self.heads, d).permute(1, 0, 2)

        q = split(self.q(q_in), nq)
        k = split(self.k(k_in), nk)
        v = split(self.v(v_in), nk)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(d), dim=-1)
        out = self.out((attn @ v).permute(1, 0, 2).reshape(nq, self.dim))
        if return_weights:
            return out, attn  # (heads, nq, nk)
        return out, None


class QueryPositionEmbed(nn.Module):
    """Sinusoidal features of selected reference coordinates followed by a
    small learnable projection. dims=2 embeds (x, y); dims=3 adds z."""

    def __init__(self, dims: int, out_dim: int, num_freqs: int):
        super().__init__()
        self.dims = dims
        self.num_freqs = num_freqs
        self.proj = nn.Sequential(
            nn.Linear(dims * 2 * num_freqs, out_dim), nn.ReLU(),
            nn.Linear(out_dim, out_dim),
        )

    def forward(self, reference: torch.Tensor) -> torch.Tensor:
        return self.proj(sine_features(reference[:, : self.dims], self.num_freqs))


class MemoryQueue:
    """FIFO queue of past query states (content, normalized reference, score,
    age); oldest entries are evicted beyond capacity."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.content = None  # (M, D)
        self.reference = None  # (M, 3) normalized
        self.score = None  # (M,)
        self.age = None  # (M,) frames since stored

    def __len__(self):
        return 0 if self.content is None else self.content.shape[0]

    def push(self, content, reference, score):
        content, reference, score = (
            content.detach(), reference.detach(), score.detach()
        )
        age = torch.zeros(content.shape[0], dtype=torch.long)
        if self.content is None:
            self.content, self.reference, self.score, self.age = (
                content, reference, score, age
            )
        else:
            self.content = torch.cat([self.content, content])
            self.reference = torch.cat([self.reference, reference])
            self.score = torch.cat([self.score, score])
            self.age = torch.cat([self.age + 1, age])
        if len(self) > self.capacity:
            excess = len(self) - self.capacity  # FIFO: drop the oldest
            self.content = self.content[excess:]
            self.reference = self.reference[excess:]
            self.score = self.score[excess:]
            self.age = self.age[excess:]

    def compensate_ego_motion(self, rel_pose: np.ndarray, bev_extent, z_range):
        """Re-express stored references in a new ego frame. `rel_pose` is the
        3x3 planar transform from the stored frame to the new frame."""
        if len(self) == 0:
            return
        x0, x1, y0, y1 = bev_extent
        ref = self.reference.clone()
        xy = torch.stack(
            [x0 + ref[:, 0] * (x1 - x0), y0 + ref[:, 1] * (y1 - y0)], dim=1
        )
        m = torch.as_tensor(rel_pose, dtype=xy.dtype)
        xy = xy @ m[:2, :2].T + m[:2, 2]
        ref[:, 0] = ((xy[:, 0] - x0) / (x1 - x0)).clamp(1e-4, 1 - 1e-4)
        ref[:, 1] = ((xy[:, 1] - y0) / (y1 - y0)).clamp(1e-4, 1 - 1e-4)
        self.reference = ref


class DecoderStage(nn.Module):
    """One modality stage: query self-attention, optional memory
    cross-attention, cross-attention to feature cells, feed-forward; post-norm
    residuals throughout."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.embed_dim
        self.self_attn = Attention(d, cfg.num_heads)
        self.mem_attn = Attention(d, cfg.num_heads)
        self.cross_attn = Attention(d, cfg.num_heads)
        self.norm1 = nn.LayerNorm(d)
        self.norm_mem = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.norm3 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(
            nn.Linear(d, cfg.ffn_dim), nn.ReLU(), nn.Linear(cfg.ffn_dim, d)
        )

    def forward(self, content, q_pos, keys, key_pos, memory_kv=None,
                collect_weights=None):
        t = content + q_pos
        sa, _ = self.self_attn(t, t, content)
        x = self.norm1(content + sa)
        if memory_kv is not None:
            mem_k, mem_v = memory_kv
            ma, _ = self.mem_attn(x + q_pos, mem_k, mem_v)
            x = self.norm_mem(x + ma)
        ca, w = self.cross_attn(
            x + q_pos, keys + key_pos, keys,
            return_weights=collect_weights is not None,
        )
        if collect_weights is not None:
            collect_weights.append(w)
        x = self.norm2(x + ca)
        return self.norm3(x + self.ffn(x))


class DecoderLayer(nn.Module):
    """Two stages in the configured order, each followed by a reference
    refinement head (additive update in inverse-sigmoid space)."""

    def __init__(self, cfg: DecoderConfig, stage_kinds):
        super().__init__()
        self.stage_kinds = tuple(stage_kinds)
        self.stages = nn.ModuleList([DecoderStage(cfg) for _ in self.stage_kinds])
        self.refines = nn.ModuleList(
            [nn.Linear(cfg.embed_dim, 3) for _ in self.stage_kinds]
        )
        for r in self.refines:
            nn.init.zeros_(r.weight)
            nn.init.zeros_(r.bias)


@dataclass
class LayerOutput:
    logits: torch.Tensor  # (N, K)
    reg: torch.Tensor  # (N, 10): center residual 3, log-size 3, sin/cos yaw, vel 2
    attr_logits: torch.Tensor  # (N, 2)
    ref_logits: torch.Tensor  # (N, 3) reference logits used for center decode
    center_norm: torch.Tensor = None  # (N, 3) decoded normalized center
    content: torch.Tensor = None  # (N, D) final query content

    def scores(self) -> torch.Tensor:
        return torch.sigmoid(self.logits).max(dim=1).values


class SequentialDecoder(nn.Module):
    """Iterative query refinement against radar BEV and camera feature maps.

    `stage_kinds` is normally the configured stage order; one-stage ablations
    pass a pair naming the same modality twice.
    """

    def __init__(self, cfg: DecoderConfig, radar_channels: int,
                 image_channels: int, stage_kinds=None):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.stage_kinds = tuple(stage_kinds or cfg.stage_order)
        d = cfg.embed_dim

        self.query_content = nn.Parameter(torch.empty(cfg.num_queries, d))
        self.query_ref_logits = nn.Parameter(torch.empty(cfg.num_queries, 3))
        gen = torch.Generator().manual_seed(0)
        with torch.no_grad():
            nn.init.normal_(self.query_content, std=0.5)
            u = torch.rand(cfg.num_queries, 3, generator=gen) * 0.9 + 0.05
            self.query_ref_logits.copy_(torch.log(u / (1 - u)))

        self.pe2d = QueryPositionEmbed(2, d, cfg.num_pos_freqs)
        self.pe3d = QueryPositionEmbed(3, d, cfg.num_pos_freqs)

        kinds = set(self.stage_kinds)
        if "radar" in kinds:
            self.radar_in = nn.Linear(radar_channels, d)
            self.radar_key_pos = nn.Linear(cfg.pe_channels, d)
        if "camera" in kinds:
            self.camera_in = nn.Linear(image_channels, d)
            self.camera_key_pos = nn.Sequential(
                nn.Linear(3 * 2 * cfg.num_pos_freqs, d), nn.ReLU(),
                nn.Linear(d, d),
            )

        self.mem_pos = nn.Sequential(
            nn.Linear(3 * 2 * cfg.num_pos_freqs, d), nn.ReLU(), nn.Linear(d, d)
        )
        self.layers = nn.ModuleList(
            [DecoderLayer(cfg, self.stage_kinds) for _ in range(cfg.layers_train)]
        )
        self.cls_head = nn.Linear(d, cfg.num_classes)
        self.attr_head = nn.Linear(d, NUM_ATTRIBUTES)
        self.reg_head = nn.Sequential(
            nn.Linear(d, d), nn.ReLU(), nn.Linear(d, 10)
        )
        nn.init.constant_(self.cls_head.bias, -2.0)

    # ---- key construction -------------------------------------------------

    def radar_keys(self, radar_feat: FeatureMap):
        c, h, w = radar_feat.shape
        keys = self.radar_in(radar_feat.data.flatten(1).T)
        pe = positional_encoding_2d(
            h, w, self.cfg.pe_channels,
            dtype=keys.dtype, device=keys.device,
        )
        key_pos = self.radar_key_pos(pe.flatten(1).T)
        return keys, key_pos

    def camera_keys(self, image_feat: FeatureMap, intrinsics, extrinsics,
                    image_hw):
        """Keys from image feature cells; positions embed each cell's viewing
        ray direction expressed in the ego frame."""
        c, h, w = image_feat.shape
        keys = self.camera_in(image_feat.data.flatten(1).T)
        ih, iw = image_hw
        us = (np.arange(w) + 0.5) * iw / w
        vs = (np.arange(h) + 0.5) * ih / h
        uu, vv = np.meshgrid(us, vs)
        pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
        rays_cam = pix @ np.linalg.inv(np.asarray(intrinsics)).T
        rot = np.asarray(extrinsics)[:3, :3]
        rays_ego = rays_cam @ rot  # R^T applied to camera-frame rays
        rays_ego /= np.linalg.norm(rays_ego, axis=1, keepdims=True)
        rays = torch.as_tensor(rays_ego, dtype=keys.dtype, device=keys.device)
        key_pos = self.camera_key_pos(
            sine_features(rays, self.cfg.num_pos_freqs)
        )
        return keys, key_pos

    def memory_kv(self, memory: MemoryQueue, dtype):
        if memory is None or len(memory) == 0:
            return None
        content = memory.content.to(dtype)
        pos = self.mem_pos(
            sine_features(memory.reference.to(dtype), self.cfg.num_pos_freqs)
        )
        return content + pos, content

    # ---- decoding ---------------------------------------------------------

    def initial_queries(self, extra=None):
        content = self.query_content
        ref_logits = self.query_ref_logits
        if extra is not None:
            content = torch.cat([content, extra["content"].to(content.dtype)])
            ref_logits = torch.cat(
                [ref_logits, extra["ref_logits"].to(ref_logits.dtype)]
            )
        return content, ref_logits

    def forward(self, feats: dict, num_layers=None, memory=None, extra=None,
                collect_weights=None) -> list:
        """Run `num_layers` decoder layers (training depth by default).

        `feats` maps stage kind -> (keys, key_pos). Returns one LayerOutput
        per layer; the layer sequence is a prefix of the training sequence, so
        inference outputs equal the first layers of a training-mode run.
        """
        cfg = self.cfg
        n_layers = num_layers or cfg.layers_train
        content, ref_logits = self.initial_queries(extra)
        mem_kv = self.memory_kv(memory, content.dtype)

        outputs = []
        for layer in self.layers[:n_layers]:
            for kind, stage, refine in zip(
                layer.stage_kinds, layer.stages, layer.refines
            ):
                reference = torch.sigmoid(ref_logits)
                q_pos = (
                    self.pe2d(reference) if kind == "radar"
                    else self.pe3d(reference)
                )
                keys, key_pos = feats[kind]
                content = stage(
                    content, q_pos, keys, key_pos, memory_kv=mem_kv,
                    collect_weights=collect_weights,
                )
                ref_logits = ref_logits + refine(content)
            reg = self.reg_head(content)
            center_norm = torch.sigmoid(ref_logits + reg[:, :3])
            outputs.append(
                LayerOutput(
                    logits=self.cls_head(content),
                    reg=reg,
                    attr_logits=self.attr_head(content),
                    ref_logits=ref_logits,
                    center_norm=center_norm,
                    content=content,
                )
            )
        return outputs

    # ---- box decoding -----------------------------------------------------

    def decode_boxes(self, out: LayerOutput, score_threshold: float = 0.0):
        """Turn one layer's raw outputs into Box3D predictions."""
        cfg = self.cfg
        x0, x1, y0, y1 = cfg.bev_extent
        z0, z1 = cfg.z_range
        anchor = torch.tensor(cfg.anchor_size, dtype=out.reg.dtype)
        center = out.center_norm
        sizes = torch.exp(out.reg[:, 3:6]) * anchor
        yaw = torch.atan2(out.reg[:, 6], out.reg[:, 7])
        probs = torch.sigmoid(out.logits)
        scores, classes = probs.max(dim=1)
        attrs = out.attr_logits.argmax(dim=1)
        boxes = []
        for i in range(center.shape[0]):
            s = float(scores[i])
            if s < score_threshold:
                continue
            yaw_i = float(yaw[i])
            boxes.append(
                Box3D(
                    center=np.array(
                        [
                            x0 + float(center[i, 0]) * (x1 - x0),
                            y0 + float(center[i, 1]) * (y1 - y0),
                            z0 + float(center[i, 2]) * (z1 - z0),
                        ]
                    ),
                    size=sizes[i].detach().cpu().numpy(),
                    yaw=math.pi if yaw_i == -math.pi else yaw_i,
                    velocity=out.reg[i, 8:10].detach().cpu().numpy(),
                    class_id=int(classes[i]),
                    score=s,
                    attribute_id=int(attrs[i]),
                )
            )
        return boxes

    def propagate_memory(self, out: LayerOutput, memory: MemoryQueue):
        """Push the top-k queries into the queue and return the query-set
        extension carried into the next frame."""
        k = min(self.cfg.memory_propagated, out.logits.shape[0])
        scores = out.scores()
        top = torch.topk(scores, k).indices
        reference = torch.sigmoid(out.ref_logits[top])
        memory.push(out.content[top], reference, scores[top])
        extra = {
            "content": out.content[top].detach(),
            "ref_logits": out.ref_logits[top].detach(),
        }
        return extra, memory


def compensate_extra(extra: dict, rel_pose: np.ndarray, bev_extent) -> dict:
    """Ego-motion-compensate the propagated queries' reference logits."""
    x0, x1, y0, y1 = bev_extent
    ref = torch.sigmoid(extra["ref_logits"])
    xy = torch.stack(
        [x0 + ref[:, 0] * (x1 - x0), y0 + ref[:, 1] * (y1 - y0)], dim=1
    )
    m = torch.as_tensor(rel_pose, dtype=xy.dtype)
    xy = xy @ m[:2, :2].T + m[:2, 2]
    ref = ref.clone()
    ref[:, 0] = ((xy[:, 0] - x0) / (x1 - x0)).clamp(1e-4, 1 - 1e-4)
    ref[:, 1] = ((xy[:, 1] - y0) / (y1 - y0)).clamp(1e-4, 1 - 1e-4)
    return {"content": extra["content"], "ref_logits": inverse_sigmoid(ref)}
