"""Set-based training: Hungarian matching, focal + L1 losses with deep
supervision over all decoder layers, and a deterministic single-stream
training loop with a two-phase step LR schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .decoder import LayerOutput, MemoryQueue, compensate_extra
from .geometry import relative_pose
from .model import DetectionModel, frame_to_tensors
from .scene import SceneSequence, accumulate_radar

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    phase1_epochs: int = None  # LR drops 10x after this many epochs; default 2/3
    weight_decay: float = 1e-2
    grad_accum: int = 2
    w_cls: float = 2.0
    w_box: float = 0.25
    w_attr: float = 0.2
    seed: int = 0
    radar_accum: int = 6  # previous sweeps stacked per frame
    use_memory: bool = True
    score_threshold: float = 0.05

    def validate(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        p1 = self.resolved_phase1()
        if not (0 < p1 <= self.epochs):
            raise ValueError("phase1_epochs must be in (0, epochs]")

    def resolved_phase1(self) -> int:
        if self.phase1_epochs is not None:
            return self.phase1_epochs
        return max(1, (2 * self.epochs) // 3)


@dataclass
class MatchResult:
    pairs: list  # (query index, gt index)
    cost: float


def box_targets(gt_boxes, bev_extent, z_range, anchor_size, dtype=torch.float32):
    """Per-GT regression targets: normalized center 3, log-size 3, sin/cos
    yaw, velocity 2. Returns (targets (M, 10), class ids, attribute ids)."""
    x0, x1, y0, y1 = bev_extent
    z0, z1 = z_range
    anchor = np.asarray(anchor_size)
    rows, classes, attrs = [], [], []
    for b in gt_boxes:
        rows.append(
            [
                (b.center[0] - x0) / (x1 - x0),
                (b.center[1] - y0) / (y1 - y0),
                (b.center[2] - z0) / (z1 - z0),
                math.log(b.size[0] / anchor[0]),
                math.log(b.size[1] / anchor[1]),
                math.log(b.size[2] / anchor[2]),
                math.sin(b.yaw),
                math.cos(b.yaw),
                b.velocity[0],
                b.velocity[1],
            ]
        )
        classes.append(b.class_id)
        attrs.append(b.attribute_id)
    t = torch.as_tensor(np.array(rows, dtype=np.float64), dtype=dtype) \
        if rows else torch.zeros(0, 10, dtype=dtype)
    return t, torch.as_tensor(classes, dtype=torch.long), \
        torch.as_tensor(attrs, dtype=torch.long)


def _pred_params(out: LayerOutput) -> torch.Tensor:
    """(N, 10) predicted box parameters in target space."""
    return torch.cat([out.center_norm, out.reg[:, 3:]], dim=1)


def match(out: LayerOutput, targets: torch.Tensor, classes: torch.Tensor,
          w_cls: float, w_box: float) -> MatchResult:
    """Optimal query-to-GT assignment minimizing
    w_cls * (-prob of gt class) + w_box * L1(box params)."""
    m = targets.shape[0]
    if m == 0:
        return MatchResult(pairs=[], cost=0.0)
    with torch.no_grad():
        probs = torch.sigmoid(out.logits)  # (N, K)
        cost_cls = -probs[:, classes]  # (N, M)
        pred = _pred_params(out)
        cost_box = torch.cdist(pred, targets.to(pred.dtype), p=1)
        cost = (w_cls * cost_cls + w_box * cost_box).cpu().numpy()
    rows, cols = linear_sum_assignment(cost)
    return MatchResult(
        pairs=list(zip(rows.tolist(), cols.tolist())),
        cost=float(cost[rows, cols].sum()),
    )


def focal_loss(logits: torch.Tensor, target_onehot: torch.Tensor,
               alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> torch.Tensor:
    """Elementwise sigmoid focal loss, summed."""
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, target_onehot, reduction="none")
    p_t = p * target_onehot + (1 - p) * (1 - target_onehot)
    alpha_t = alpha * target_onehot + (1 - alpha) * (1 - target_onehot)
    return (alpha_t * (1 - p_t) ** gamma * ce).sum()


def frame_loss(outputs: list, gt_boxes, decoder_cfg, train_cfg: TrainConfig):
    """Deep-supervised loss over all layer outputs; re-matched per layer.

    Returns (total, {component: value}).
    """
    targets, classes, attrs = box_targets(
        gt_boxes, decoder_cfg.bev_extent, decoder_cfg.z_range,
        decoder_cfg.anchor_size, dtype=outputs[0].logits.dtype,
    )
    total_cls = outputs[0].logits.new_zeros(())
    total_box = outputs[0].logits.new_zeros(())
    total_attr = outputs[0].logits.new_zeros(())
    for out in outputs:
        if not (torch.isfinite(out.logits).all() and torch.isfinite(out.reg).all()):
            raise TrainingError("non-finite decoder output")
        n = out.logits.shape[0]
        result = match(out, targets, classes, train_cfg.w_cls, train_cfg.w_box)
        onehot = torch.zeros_like(out.logits)
        norm = max(len(result.pairs), 1)
        if result.pairs:
            qi = torch.as_tensor([p[0] for p in result.pairs])
            gi = torch.as_tensor([p[1] for p in result.pairs])
            onehot[qi, classes[gi]] = 1.0
            pred = _pred_params(out)
            total_box = total_box + F.l1_loss(
                pred[qi], targets[gi].to(pred.dtype), reduction="sum"
            ) / norm
            total_attr = total_attr + F.cross_entropy(
                out.attr_logits[qi], attrs[gi], reduction="sum"
            ) / norm
        total_cls = total_cls + focal_loss(out.logits, onehot) / norm
    if not torch.isfinite(total_cls + total_box):
        raise TrainingError("non-finite loss in forward pass")
    total = (train_cfg.w_cls * total_cls + train_cfg.w_box * total_box
             + train_cfg.w_attr * total_attr)
    components = {
        "cls": total_cls.detach().item(), "box": total_box.detach().item(),
        "attr": total_attr.detach().item(), "total": total.detach().item(),
    }
    return total, components


def sequence_frames(model: DetectionModel, sequence: SceneSequence,
                    cfg: TrainConfig, num_layers=None, collect_weights=None):
    """Iterate the sequence with radar accumulation and memory propagation,
    yielding (frame, layer outputs)."""
    dec_cfg = model.cfg.decoder
    memory = MemoryQueue(dec_cfg.memory_capacity) if cfg.use_memory else None
    extra = None
    prev_pose = None
    for idx, frame in enumerate(sequence.frames):
        sweep = accumulate_radar(sequence, idx, cfg.radar_accum)
        tensors = frame_to_tensors(frame, accumulated_radar=sweep)
        if prev_pose is not None:
            rel = relative_pose(prev_pose, frame.ego_pose.matrix_2d())
            if memory is not None:
                memory.compensate_ego_motion(
                    rel, dec_cfg.bev_extent, dec_cfg.z_range
                )
            if extra is not None:
                extra = compensate_extra(extra, rel, dec_cfg.bev_extent)
        outputs = model(
            tensors, memory=memory, extra=extra, num_layers=num_layers,
            collect_weights=collect_weights,
        )
        yield frame, outputs
        if cfg.use_memory:
            extra, memory = model.decoder.propagate_memory(outputs[-1], memory)
        prev_pose = frame.ego_pose.matrix_2d()


def run_inference(model: DetectionModel, sequence: SceneSequence,
                  cfg: TrainConfig, num_layers=None):
    """Predicted Box3D lists per frame (inference depth by default)."""
    model.eval()
    n_layers = num_layers or model.cfg.decoder.layers_infer
    preds = []
    with torch.no_grad():
        for frame, outputs in sequence_frames(model, sequence, cfg,
                                              num_layers=n_layers):
            preds.append(
                model.decoder.decode_boxes(
                    outputs[-1], score_threshold=cfg.score_threshold
                )
            )
    return preds


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr if epoch < cfg.resolved_phase1() else cfg.lr / 10.0


def train(sequence: SceneSequence, model: DetectionModel, cfg: TrainConfig,
          out_dir=None, log_fn=None, val_sequence=None):
    """Train on one sequence. Writes per-epoch checkpoints and a line-delimited
    log when `out_dir` is given; returns the log records."""
    from .checkpoint import save_checkpoint  # local import avoids a cycle

    cfg.validate()
    torch.manual_seed(cfg.seed)
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    records = []
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    last_good = None

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        epoch_losses = []
        opt.zero_grad()
        pending = 0
        try:
            for i, (frame, outputs) in enumerate(
                sequence_frames(model, sequence, cfg)
            ):
                loss, comps = frame_loss(outputs, frame.gt_boxes,
                                         model.cfg.decoder, cfg)
                (loss / cfg.grad_accum).backward()
                pending += 1
                if pending == cfg.grad_accum:
                    opt.step()
                    opt.zero_grad()
                    pending = 0
                epoch_losses.append(comps)
        except TrainingError:
            if last_good and out_dir:
                (out_dir / "last_good.txt").write_text(str(last_good))
            raise
        if pending:
            opt.step()
            opt.zero_grad()

        record = {
            "epoch": epoch,
            "lr": lr,
            "loss": float(np.mean([c["total"] for c in epoch_losses])),
            "loss_cls": float(np.mean([c["cls"] for c in epoch_losses])),
            "loss_box": float(np.mean([c["box"] for c in epoch_losses])),
        }
        if val_sequence is not None:
            from .metrics import evaluate  # avoid cycle at import time

            preds = run_inference(model, val_sequence, cfg)
            gts = [f.gt_boxes for f in val_sequence.frames]
            names = [f"class_{c}" for c in range(model.cfg.decoder.num_classes)]
            report = evaluate(preds, gts, names)
            record["val_nds"] = report.nds_score
            record["val_map"] = report.mean_ap
            model.train()
        records.append(record)
        if log_fn:
            log_fn(record)
        if out_dir:
            ckpt = out_dir / f"epoch_{epoch}.ckpt"
            save_checkpoint(model, ckpt, step=epoch)
            last_good = ckpt
            with open(out_dir / "train_log.jsonl", "a") as f:
                f.write(json.dumps(record) + "\n")
    return records
