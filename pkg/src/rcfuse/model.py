"""Full detector assembly and modality ablation modes.

Modes mirror the ablation matrix: the full radar-camera model, one-stage
decoders with a modality branch removed, ones-tensor feature substitution
with the two-stage decoder preserved, and a foundation-only image branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .adapter import FoundationAdapter, FoundationConfig
from .backbone import BackboneConfig, FeatureMap, Neck, VisualBackbone
from .decoder import DecoderConfig, MemoryQueue, SequentialDecoder
from .radar import DenseRadarEncoder, PillarConfig, SparsePillarEncoder
from .scene import ConfigurationError

ABLATION_MODES = (
    "full_rc",
    "camera_one_stage",
    "camera_two_stage_ones_radar",
    "radar_one_stage",
    "radar_two_stage_ones_camera",
    "foundation_only",
)

# which branches each mode executes
_USES_RADAR_ENCODERS = {"full_rc", "radar_one_stage", "radar_two_stage_ones_camera",
                        "foundation_only"}
_USES_CAMERA_BRANCH = {"full_rc", "camera_one_stage", "camera_two_stage_ones_radar",
                       "foundation_only"}
_ONE_STAGE = {"camera_one_stage": "camera", "radar_one_stage": "radar"}


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    foundation: FoundationConfig = field(default_factory=FoundationConfig)
    pillar: PillarConfig = field(default_factory=PillarConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    use_adapter: bool = True
    image_hw: tuple = (224, 448)


class DetectionModel(nn.Module):
    """Backbone + adapter + radar encoders + sequential decoder, specialized
    to one ablation mode at construction."""

    def __init__(self, cfg: ModelConfig, mode: str = "full_rc"):
        super().__init__()
        if mode not in ABLATION_MODES:
            raise ConfigurationError(f"unknown ablation mode {mode!r}")
        self.cfg = cfg
        self.mode = mode

        needs_camera_params = mode in _USES_CAMERA_BRANCH or mode in (
            "radar_two_stage_ones_camera",
        )
        needs_radar_params = mode in _USES_RADAR_ENCODERS or mode in (
            "camera_two_stage_ones_radar",
        )

        if mode in _USES_CAMERA_BRANCH and mode != "foundation_only":
            self.backbone = VisualBackbone(cfg.backbone)
            self.neck = Neck(cfg.backbone)
        if mode in _USES_CAMERA_BRANCH and (cfg.use_adapter or mode == "foundation_only"):
            self.adapter = FoundationAdapter(
                cfg.foundation, cfg.backbone.out_channels, cfg.backbone.feat_hw
            )
        if mode in _USES_RADAR_ENCODERS:
            self.sparse_encoder = SparsePillarEncoder(cfg.pillar)
            self.dense_encoder = DenseRadarEncoder(cfg.pillar)

        if mode in _ONE_STAGE:
            kinds = (_ONE_STAGE[mode], _ONE_STAGE[mode])
        else:
            kinds = cfg.decoder.stage_order
        self.decoder = SequentialDecoder(
            cfg.decoder,
            radar_channels=cfg.pillar.dense_out_channels if needs_radar_params else 1,
            image_channels=cfg.backbone.out_channels if needs_camera_params else 1,
            stage_kinds=kinds,
        )

    # ---- feature branches -------------------------------------------------

    def image_features(self, image: torch.Tensor) -> FeatureMap:
        if self.mode == "foundation_only":
            data = self.adapter.extract_features(image)
            return FeatureMap(data, stride=16)
        pyramid = self.backbone(image)
        feat = self.neck(pyramid)
        if getattr(self, "adapter", None) is not None and self.cfg.use_adapter:
            feat = self.adapter(image, feat)
        return feat

    def radar_features(self, points: torch.Tensor) -> FeatureMap:
        bev = self.sparse_encoder(points)
        return self.dense_encoder(bev)

    def _ones_map(self, channels, hw, dtype) -> FeatureMap:
        return FeatureMap(torch.ones(channels, *hw, dtype=dtype), stride=1)

    # ---- forward ----------------------------------------------------------

    def forward(self, frame: dict, memory: MemoryQueue = None, extra=None,
                num_layers=None, collect_weights=None) -> list:
        """Run one frame. `frame` needs: image (3,H,W) tensor, radar_points
        (N,5) tensor, intrinsics, extrinsics. Returns per-layer outputs."""
        cfg = self.cfg
        dtype = next(self.parameters()).dtype
        feats = {}
        kinds = set(self.decoder.stage_kinds)

        if "radar" in kinds:
            if self.mode == "camera_two_stage_ones_radar":
                radar_feat = self._ones_map(
                    cfg.pillar.dense_out_channels, cfg.pillar.grid_hw, dtype
                )
            else:
                radar_feat = self.radar_features(frame["radar_points"].to(dtype))
            feats["radar"] = self.decoder.radar_keys(radar_feat)

        if "camera" in kinds:
            if self.mode == "radar_two_stage_ones_camera":
                image_feat = self._ones_map(
                    cfg.backbone.out_channels, cfg.backbone.feat_hw, dtype
                )
            else:
                image_feat = self.image_features(frame["image"].to(dtype))
            feats["camera"] = self.decoder.camera_keys(
                image_feat, frame["intrinsics"], frame["extrinsics"], cfg.image_hw
            )

        return self.decoder(
            feats, num_layers=num_layers, memory=memory, extra=extra,
            collect_weights=collect_weights,
        )


def apply_mode(model: DetectionModel, mode: str) -> DetectionModel:
    """Return a model configured for `mode`, warm-started from `model`.

    Matching parameters are copied; for one-stage modes both decoder stage
    slots start from the surviving modality's stage weights.
    """
    if mode not in ABLATION_MODES:
        raise ConfigurationError(f"unknown ablation mode {mode!r}")
    if mode == model.mode:
        return model
    target = DetectionModel(model.cfg, mode)
    src_state = model.state_dict()
    tgt_state = target.state_dict()

    remap = {}
    if mode in _ONE_STAGE and model.mode == "full_rc":
        keep = _ONE_STAGE[mode]
        src_slot = model.decoder.stage_kinds.index(keep)
        for name in tgt_state:
            for slot in (0, 1):
                pref = f".stages.{slot}."
                if pref in name:
                    remap[name] = name.replace(pref, f".stages.{src_slot}.")

    for name, value in tgt_state.items():
        src_name = remap.get(name, name)
        if src_name in src_state and src_state[src_name].shape == value.shape:
            tgt_state[name] = src_state[src_name].clone()
    target.load_state_dict(tgt_state)
    return target


def frame_to_tensors(frame, accumulated_radar=None, dtype=torch.float32) -> dict:
    """Convert a SceneFrame (plus optionally pre-accumulated radar) into the
    dict consumed by DetectionModel.forward."""
    cam = frame.cameras[0]
    radar = accumulated_radar if accumulated_radar is not None else frame.radar
    return {
        "image": torch.as_tensor(
            np.transpose(cam.image, (2, 0, 1)), dtype=dtype
        ),
        "radar_points": torch.as_tensor(radar.points, dtype=dtype),
        "intrinsics": cam.intrinsics,
        "extrinsics": cam.extrinsics,
    }
