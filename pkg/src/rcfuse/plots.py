"""Static plot emission: per-class precision-recall curves and per-frame BEV
scatter images (ground truth boxes, predictions, radar points)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import TP_THRESHOLD, match_detections


def pr_curve_points(pred_frames, gt_frames, class_id, threshold=TP_THRESHOLD):
    flags_all, scores_all = [], []
    num_gt = 0
    for preds, gts in zip(pred_frames, gt_frames):
        cp = [p for p in preds if p.class_id == class_id]
        cg = [g for g in gts if g.class_id == class_id]
        num_gt += len(cg)
        flags, scores, _ = match_detections(cp, cg, threshold)
        flags_all.append(flags)
        scores_all.append(scores)
    flags = np.concatenate(flags_all) if flags_all else np.zeros(0, bool)
    scores = np.concatenate(scores_all) if scores_all else np.zeros(0)
    order = np.argsort(-scores, kind="stable")
    flags = flags[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / max(num_gt, 1)
    precision = tp / np.maximum(tp + fp, 1)
    return recall, precision


def emit_pr_curves(pred_frames, gt_frames, class_names, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, name in enumerate(class_names):
        recall, precision = pr_curve_points(pred_frames, gt_frames, c)
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(np.concatenate([[0.0], recall]),
                np.concatenate([[1.0], precision]), drawstyle="steps-post")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.05)
        ax.set_title(f"PR {name} @ {TP_THRESHOLD} m")
        path = out_dir / f"pr_{name}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths


def _draw_box(ax, box, color, lw=1.0):
    corners = box.corners_bev()
    loop = np.vstack([corners, corners[:1]])
    ax.plot(loop[:, 0], loop[:, 1], color=color, linewidth=lw)


def emit_bev_scatter(sequence, pred_frames, bev_extent, out_dir):
    """One image per frame: radar points, GT boxes (green), predictions (red,
    alpha by score)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x0, x1, y0, y1 = bev_extent
    paths = []
    for frame, preds in zip(sequence.frames, pred_frames):
        fig, ax = plt.subplots(figsize=(4, 4))
        pts = frame.radar.points
        if len(pts):
            ax.scatter(pts[:, 0], pts[:, 1], s=3, c="gray", label="radar")
        for box in frame.gt_boxes:
            _draw_box(ax, box, "green", lw=1.2)
        for box in preds:
            _draw_box(ax, box, (1.0, 0.0, 0.0, max(0.15, min(1.0, box.score))))
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_aspect("equal")
        ax.set_title(f"frame {frame.frame_id}")
        path = out_dir / f"bev_frame_{frame.frame_id}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
