"""Center-distance detection metrics: AP at several thresholds plus AOE, ATE and ASE.

Matching is greedy in descending score order. Precision and the
true-positive errors are sampled on a 101-point recall grid; samples below
10 % recall are dropped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError
from .scene import CLASSES, Detection, ObbLabel, Scene, load_detections, load_scenes

THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0
RECALL_SAMPLES = 101
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
# grid index of the first kept recall sample (recall >= MIN_RECALL)
_FIRST_SAMPLE = round(MIN_RECALL * (RECALL_SAMPLES - 1))


@dataclass
class MatchResult:
    """Score-ordered detections tagged TP/FP; error arrays hold NaN for FPs."""

    threshold: float
    scores: np.ndarray
    is_tp: np.ndarray
    label_index: np.ndarray
    center_error: np.ndarray
    orientation_error: np.ndarray
    scale_error: np.ndarray
    num_gt: int

    @property
    def num_tp(self) -> int:
        return int(self.is_tp.sum())

    @property
    def num_fp(self) -> int:
        return int((~self.is_tp).sum())


def orientation_error(yaw_a: float, yaw_b: float) -> float:
    """Smallest absolute angle between two headings, in [0, pi]."""
    return abs(math.remainder(yaw_a - yaw_b, 2.0 * math.pi))


def scale_error(det, label) -> float:
    """1 - IoU of the two boxes once centers and headings are aligned."""
    inter = min(det.length, label.length) * min(det.width, label.width)
    union = det.length * det.width + label.length * label.width - inter
    return 1.0 - inter / union


def _order(detections) -> list[int]:
    return sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))


def match(detections: list[Detection], labels: list[ObbLabel], threshold: float) -> MatchResult:
    """Greedy matching: each detection claims the nearest unclaimed same-class label."""
    order = _order(detections)
    dets = [detections[i] for i in order]
    n = len(dets)
    is_tp = np.zeros(n, dtype=bool)
    label_index = np.full(n, -1, dtype=np.int64)
    errs = np.full((3, n), np.nan)
    claimed = np.zeros(len(labels), dtype=bool)
    label_xy = np.array([[lab.cx, lab.cy] for lab in labels]).reshape(-1, 2)
    label_cls = np.array([lab.class_name for lab in labels], dtype=object)
    for k, det in enumerate(dets):
        if not len(labels):
            break
        dist = np.hypot(label_xy[:, 0] - det.cx, label_xy[:, 1] - det.cy)
        ok = (~claimed) & (label_cls == det.class_name) & (dist <= threshold)
        if not ok.any():
            continue
        j = int(np.flatnonzero(ok)[np.argmin(dist[ok])])
        claimed[j] = True
        is_tp[k] = True
        label_index[k] = j
        lab = labels[j]
        errs[:, k] = (dist[j], orientation_error(det.yaw, lab.yaw), scale_error(det, lab))
    return MatchResult(threshold, np.array([d.score for d in dets]), is_tp, label_index,
                       errs[0], errs[1], errs[2], len(labels))


def merge_matches(results: list[MatchResult]) -> MatchResult:
    """Concatenate per-scene matches and re-sort by score (stable over scene order)."""
    if not results:
        raise ValueError("nothing to merge")
    scores = np.concatenate([r.scores for r in results])
    order = np.argsort(-scores, kind="stable")
    cat = lambda attr: np.concatenate([getattr(r, attr) for r in results])[order]  # noqa: E731
    return MatchResult(results[0].threshold, scores[order], cat("is_tp"), cat("label_index"),
                       cat("center_error"), cat("orientation_error"), cat("scale_error"),
                       sum(r.num_gt for r in results))


def recall_grid() -> np.ndarray:
    return np.arange(RECALL_SAMPLES) / (RECALL_SAMPLES - 1)


def _interp(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Piecewise-linear lookup; at repeated xs the last entry wins, zero beyond the end."""
    j = np.searchsorted(xs, grid, side="right") - 1
    out = np.zeros_like(grid)
    below = j < 0
    out[below] = ys[0]
    inside = (~below) & (grid <= xs[-1])
    jj = j[inside]
    exact = xs[jj] == grid[inside]
    nxt = np.minimum(jj + 1, len(xs) - 1)
    span = xs[nxt] - xs[jj]
    frac = np.where(exact | (span == 0), 0.0, (grid[inside] - xs[jj]) / np.where(span == 0, 1.0, span))
    out[inside] = ys[jj] + frac * (ys[nxt] - ys[jj])
    return out


def precision_recall(result: MatchResult) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(result.is_tp)
    fp = np.cumsum(~result.is_tp)
    return tp / (tp + fp), tp / result.num_gt


def average_precision(result: MatchResult, num_gt: int | None = None) -> float:
    num_gt = result.num_gt if num_gt is None else num_gt
    if num_gt < 1:
        raise ValueError("average precision needs at least one ground-truth label")
    if not result.is_tp.any():
        return 0.0
    tp = np.cumsum(result.is_tp)
    fp = np.cumsum(~result.is_tp)
    precision = tp / (tp + fp)
    recall = tp / num_gt
    sampled = _interp(recall_grid(), recall, precision)[_FIRST_SAMPLE:]
    # normalize per sample so that perfect precision averages to exactly 1
    return float(np.mean(np.maximum(sampled - MIN_PRECISION, 0.0) / (1.0 - MIN_PRECISION)))


def tp_metrics(result: MatchResult) -> dict[str, float]:
    """AOE, ATE and ASE as cumulative means over TPs, averaged over the recall grid."""
    tp_mask = result.is_tp
    n_tp = int(tp_mask.sum())
    # grid samples i with MIN_RECALL <= i / 100 <= max recall = n_tp / num_gt
    last = (n_tp * (RECALL_SAMPLES - 1)) // result.num_gt if result.num_gt else -1
    if n_tp == 0 or last < _FIRST_SAMPLE:
        return {"aoe": 1.0, "ate": 1.0, "ase": 1.0}
    tp_recall = np.arange(1, n_tp + 1) / result.num_gt
    grid = recall_grid()[_FIRST_SAMPLE:last + 1]
    out = {}
    for key, values in (("aoe", result.orientation_error), ("ate", result.center_error),
                        ("ase", result.scale_error)):
        v = values[tp_mask]
        cummean = np.cumsum(v) / np.arange(1, n_tp + 1)
        out[key] = float(np.mean(_interp(grid, tp_recall, cummean)))
    return out


# -- reports ------------------------------------------------------------------

def report_config(extra: dict | None = None) -> dict:
    cfg = {"thresholds": list(THRESHOLDS), "tp_threshold": TP_THRESHOLD, "recall_samples": RECALL_SAMPLES,
           "min_recall": MIN_RECALL, "min_precision": MIN_PRECISION}
    if extra:
        cfg.update(extra)
    return cfg


def evaluate_sets(detections: dict[int, list[Detection]], scenes: list[Scene],
                  config: dict | None = None) -> dict:
    """Metrics over all scenes; returns the JSON-ready report dictionary."""
    scene_ids = [s.scene_id for s in scenes]
    missing = sorted(set(scene_ids) - set(detections))
    extra = sorted(set(detections) - set(scene_ids))
    if missing or extra:
        raise AlignmentError(f"scene ids differ: missing detections for {missing}, "
                             f"detections for unknown scenes {extra}")
    report = {"class": {}, "config": report_config(config), "warnings": []}
    for name in CLASSES:
        per_thr = {}
        for thr in THRESHOLDS:
            parts = [match([d for d in detections[s.scene_id] if d.class_name == name],
                           [lab for lab in s.labels if lab.class_name == name], thr) for s in scenes]
            per_thr[thr] = merge_matches(parts) if parts else None
        num_gt = per_thr[THRESHOLDS[0]].num_gt if scenes else 0
        if num_gt == 0:
            report["warnings"].append({"class": name, "reason": "no ground-truth labels; class skipped"})
            continue
        ap = {f"{thr:.1f}": average_precision(per_thr[thr]) for thr in THRESHOLDS}
        tp_res = per_thr[TP_THRESHOLD]
        entry = {"ap": ap, "map": float(np.mean(list(ap.values())))}
        entry.update(tp_metrics(tp_res))
        entry.update({"gt": num_gt, "tp": tp_res.num_tp, "fp": tp_res.num_fp})
        report["class"][name] = entry
    return report


def evaluate(detections_file, scenes_file) -> dict:
    detections, det_config = load_detections(detections_file)
    scenes = load_scenes(scenes_file)
    return evaluate_sets(detections, scenes, det_config)


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def format_table(report: dict) -> str:
    head = f"{'class':<11}" + "".join(f"{'AP' + k:>8}" for k in ("0.5", "1.0", "2.0", "4.0"))
    head += f"{'mAP':>8}{'AOE':>8}{'ATE':>8}{'ASE':>8}{'GT':>6}{'TP':>6}{'FP':>6}"
    lines = [head]
    for name, e in report["class"].items():
        row = f"{name:<11}" + "".join(f"{e['ap'][k]:>8.3f}" for k in ("0.5", "1.0", "2.0", "4.0"))
        row += f"{e['map']:>8.3f}{e['aoe']:>8.3f}{e['ate']:>8.3f}{e['ase']:>8.3f}{e['gt']:>6}{e['tp']:>6}{e['fp']:>6}"
        lines.append(row)
    for w in report.get("warnings", []):
        lines.append(f"{w['class']:<11}skipped: {w['reason']}")
    return "\n".join(lines)
