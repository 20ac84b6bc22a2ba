"""nuScenes-style detection evaluation: center-distance matching, per-class
AP over distance thresholds, the five true-positive error metrics, and NDS.

All functions are pure numpy; predictions and ground truth are Box3D lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

AP_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0  # meters, threshold at which TP error metrics are computed
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
TP_METRIC_NAMES = ("ate", "ase", "aoe", "ave", "aae")


@dataclass
class MetricsReport:
    class_names: list
    ap: dict  # class -> {threshold -> AP or None if no GT}
    tp_errors: dict  # class -> {metric -> value}
    mean_ap: float = 0.0
    mean_tp: dict = field(default_factory=dict)  # metric -> mean over classes
    nds_score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "ap": self.ap,
            "tp_errors": self.tp_errors,
            "mAP": self.mean_ap,
            "mean_tp": self.mean_tp,
            "NDS": self.nds_score,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def center_distance(a, b) -> float:
    """BEV (ground-plane) center distance."""
    return float(np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]))


def match_detections(preds, gts, threshold_m):
    """Greedy score-ordered matching at one distance threshold.

    Returns (tp_flags, scores, matched_pairs): flags/scores aligned with
    predictions sorted by descending score; matched_pairs is a list of
    (pred, gt) Box3D tuples.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    taken = set()
    tp_flags = np.zeros(len(preds), dtype=bool)
    scores = np.zeros(len(preds))
    pairs = []
    for rank, i in enumerate(order):
        p = preds[i]
        scores[rank] = p.score
        best_j, best_d = -1, float(threshold_m)
        for j, g in enumerate(gts):
            if j in taken or g.class_id != p.class_id:
                continue
            d = center_distance(p, g)
            if d <= best_d:
                best_j, best_d = j, d
        if best_j >= 0:
            taken.add(best_j)
            tp_flags[rank] = True
            pairs.append((p, gts[best_j]))
    return tp_flags, scores, pairs


def average_precision(tp_flags, num_gt) -> float | None:
    """AP with the nuScenes convention: precision interpolated at 101 recall
    points, recall below 10% dropped, a 10% precision floor subtracted, and
    the area renormalized. Returns None when num_gt == 0 (undefined)."""
    if num_gt == 0:
        return None
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # step convention: p(r) is the precision at the first operating point
    # reaching recall >= r, zero when no point does
    rec_grid = np.linspace(0.0, 1.0, 101)[int(round(100 * MIN_RECALL)) + 1 :]
    idx = np.searchsorted(recall, rec_grid, side="left")
    prec = np.where(idx < len(recall), precision[np.minimum(idx, len(recall) - 1)], 0.0)
    prec = np.clip(prec - MIN_PRECISION, 0.0, None)
    return float(np.mean(prec) / (1.0 - MIN_PRECISION))


def iou3d(a, b) -> float:
    """Scale-only 3D IoU: boxes compared after aligning centers and yaw, so
    only the size triples matter. Used for the scale error (ASE = 1 - IoU)."""
    mins = np.minimum(a.size, b.size)
    inter = float(np.prod(mins))
    union = float(np.prod(a.size)) + float(np.prod(b.size)) - inter
    return inter / union if union > 0 else 0.0


def yaw_error(a, b) -> float:
    """Smallest absolute yaw difference, in [0, pi]."""
    d = abs(a.yaw - b.yaw) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def tp_errors(pairs) -> dict:
    """Mean TP error metrics over matched (pred, gt) pairs. An empty match
    set yields the worst-case value 1.0 for every metric, per convention."""
    if not pairs:
        return {name: 1.0 for name in TP_METRIC_NAMES}
    ate = np.mean([center_distance(p, g) for p, g in pairs])
    ase = np.mean([1.0 - iou3d(p, g) for p, g in pairs])
    aoe = np.mean([yaw_error(p, g) for p, g in pairs])
    ave = np.mean([np.linalg.norm(p.velocity - g.velocity) for p, g in pairs])
    aae = 1.0 - np.mean([float(p.attribute_id == g.attribute_id) for p, g in pairs])
    return {"ate": float(ate), "ase": float(ase), "aoe": float(aoe),
            "ave": float(ave), "aae": float(aae)}


def nds(mean_ap, m_ate, m_ase, m_aoe, m_ave, m_aae) -> float:
    """NDS = (5 * mAP + sum over TP metrics of (1 - min(1, mTP))) / 10.

    TP inputs are taken as-reported (AOE in radians, no extra normalization);
    this reading reproduces the published tables.
    """
    tp_terms = sum(1.0 - min(1.0, m) for m in (m_ate, m_ase, m_aoe, m_ave, m_aae))
    return (5.0 * mean_ap + tp_terms) / 10.0


def evaluate(pred_frames, gt_frames, class_names) -> MetricsReport:
    """Full evaluation over a list of frames.

    `pred_frames` and `gt_frames` are parallel lists of Box3D lists. AP is
    averaged over the four distance thresholds; TP errors use the 2 m match.
    """
    assert len(pred_frames) == len(gt_frames)
    num_classes = len(class_names)
    ap_out = {}
    tp_out = {}
    for c in range(num_classes):
        name = class_names[c]
        num_gt = sum(
            sum(1 for g in frame if g.class_id == c) for frame in gt_frames
        )
        ap_per_thr = {}
        pairs_2m = []
        for thr in AP_THRESHOLDS:
            flags_all, scores_all = [], []
            for preds, gts in zip(pred_frames, gt_frames):
                cp = [p for p in preds if p.class_id == c]
                cg = [g for g in gts if g.class_id == c]
                flags, scores, pairs = match_detections(cp, cg, thr)
                flags_all.append(flags)
                scores_all.append(scores)
                if thr == TP_THRESHOLD:
                    pairs_2m.extend(pairs)
            flags = np.concatenate(flags_all) if flags_all else np.zeros(0, bool)
            scores = np.concatenate(scores_all) if scores_all else np.zeros(0)
            order = np.argsort(-scores, kind="stable")
            ap_per_thr[str(thr)] = average_precision(flags[order], num_gt)
        ap_out[name] = ap_per_thr
        tp_out[name] = tp_errors(pairs_2m) if num_gt > 0 else None

    # means exclude classes without ground truth
    ap_values = [
        v for per in ap_out.values() if per is not None
        for v in per.values() if v is not None
    ]
    mean_ap = float(np.mean(ap_values)) if ap_values else 0.0
    mean_tp = {}
    for metric in TP_METRIC_NAMES:
        vals = [t[metric] for t in tp_out.values() if t is not None]
        mean_tp[metric] = float(np.mean(vals)) if vals else 1.0
    score = nds(mean_ap, mean_tp["ate"], mean_tp["ase"], mean_tp["aoe"],
                mean_tp["ave"], mean_tp["aae"])
    return MetricsReport(
        class_names=list(class_names),
        ap=ap_out,
        tp_errors=tp_out,
        mean_ap=mean_ap,
        mean_tp=mean_tp,
        nds_score=score,
    )
