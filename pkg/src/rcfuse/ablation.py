"""Modality/decoder ablation harness: train each configured mode under an
identical budget, evaluate, and emit a table shaped like the published
modality-ablation results (Input, Stages, mAP, mTP columns, NDS).
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import torch

from .metrics import evaluate
from .model import ABLATION_MODES, DetectionModel, apply_mode
from .scene import ConfigurationError
from .train import TrainConfig, run_inference, train

TABLE_COLUMNS = ("Input", "Stages", "mAP", "mATE", "mASE", "mAOE", "mAVE",
                 "mAAE", "NDS")

MODE_LABELS = {
    "full_rc": ("RC", "Two"),
    "camera_one_stage": ("C", "One"),
    "camera_two_stage_ones_radar": ("C", "Two"),
    "radar_one_stage": ("R", "One"),
    "radar_two_stage_ones_camera": ("R", "Two"),
    "foundation_only": ("F", "Two"),
}


def train_mode(mode: str, model_cfg, train_seq, train_cfg: TrainConfig,
               seed: int, warm_start_from_full=True) -> DetectionModel:
    """Build and train one ablation mode with a seeded initialization.

    With `warm_start_from_full`, parameters are first drawn for the full
    model and the mode model is warm-started from them, so every mode shares
    its surviving weights at initialization.
    """
    if mode not in ABLATION_MODES:
        raise ConfigurationError(f"unknown ablation mode {mode!r}")
    torch.manual_seed(seed)
    if warm_start_from_full:
        base = DetectionModel(model_cfg, "full_rc")
        model = apply_mode(base, mode)
    else:
        model = DetectionModel(model_cfg, mode)
    cfg = dataclasses.replace(train_cfg, seed=seed)
    train(train_seq, model, cfg)
    return model


def run_ablation(train_seq, val_seq, modes, model_cfg, train_cfg: TrainConfig,
                 seeds=(0, 1, 2), class_names=None, progress=None):
    """One row per mode: metrics averaged over seeds at equal budgets.

    Returns a list of row dicts carrying the seed means plus the per-seed
    NDS values.
    """
    class_names = class_names or [
        f"class_{c}" for c in range(model_cfg.decoder.num_classes)
    ]
    gts = [f.gt_boxes for f in val_seq.frames]
    rows = []
    for mode in modes:
        per_seed = []
        for seed in seeds:
            model = train_mode(mode, model_cfg, train_seq, train_cfg, seed)
            preds = run_inference(model, val_seq, train_cfg)
            report = evaluate(preds, gts, class_names)
            per_seed.append(report)
            if progress:
                progress(mode, seed, report.nds_score)
        n = len(per_seed)
        row = {
            "mode": mode,
            "input": MODE_LABELS[mode][0],
            "stages": MODE_LABELS[mode][1],
            "mAP": sum(r.mean_ap for r in per_seed) / n,
            "mATE": sum(r.mean_tp["ate"] for r in per_seed) / n,
            "mASE": sum(r.mean_tp["ase"] for r in per_seed) / n,
            "mAOE": sum(r.mean_tp["aoe"] for r in per_seed) / n,
            "mAVE": sum(r.mean_tp["ave"] for r in per_seed) / n,
            "mAAE": sum(r.mean_tp["aae"] for r in per_seed) / n,
            "NDS": sum(r.nds_score for r in per_seed) / n,
            "nds_per_seed": [r.nds_score for r in per_seed],
        }
        rows.append(row)
    return rows


def format_table(rows) -> str:
    lines = ["\t".join(TABLE_COLUMNS)]
    for row in rows:
        lines.append(
            "\t".join(
                [row["input"], row["stages"]]
                + [f"{row[c]:.4f}" for c in TABLE_COLUMNS[2:]]
            )
        )
    return "\n".join(lines) + "\n"


def write_report(rows, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation_table.tsv").write_text(format_table(rows))
    (out_dir / "ablation_results.json").write_text(json.dumps(rows, indent=1))
