"""Location-based detection evaluation: greedy matching under the decision
circle or pseudo-box IoU criterion, PR curves, AP50, and optimal-F1
threshold selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core_io import Annotation, DatasetManifest
from .geometry import iou_square_offset


@dataclass(frozen=True)
class EvalMode:
    """Matching criterion: decision circle of radius r, or square-IoU (a, alpha)."""

    kind: str = "circle"
    radius: float = 12.0
    a: float = 42.36193117729243
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in ("circle", "iou"):
            raise ValueError(f"unknown eval mode {self.kind!r}")
        if self.radius <= 0 or self.a <= 0 or not (0 < self.alpha < 1):
            raise ValueError("invalid mode parameters")

    def matches(self, det: Annotation, gt: Annotation) -> bool:
        dx = det.cx - gt.cx
        dy = det.cy - gt.cy
        if self.kind == "circle":
            return dx * dx + dy * dy <= self.radius * self.radius
        return iou_square_offset(self.a, dx, dy) >= self.alpha


@dataclass(frozen=True)
class MatchRecord:
    det_index: int | None      # None for an unmatched ground truth (FN)
    gt_index: int | None       # None for an unmatched detection (FP)
    confidence: float | None   # detection confidence, when a detection is involved


def _det_order(dets: list[Annotation]) -> list[int]:
    return sorted(range(len(dets)),
                  key=lambda i: (-dets[i].confidence, dets[i].cy, dets[i].cx, i))


def match_detections(dets: list[Annotation], gts: list[Annotation],
                     mode: EvalMode) -> list[MatchRecord]:
    """Greedy one-to-one matching, confidence-major, distance-minor.

    Detections are processed in confidence-descending order (ties by
    (cy, cx), then input index); each takes the nearest still-unmatched
    ground truth satisfying the criterion.
    """
    taken = [False] * len(gts)
    records = []
    for i in _det_order(dets):
        d = dets[i]
        best_j = None
        best_dist = math.inf
        for j, g in enumerate(gts):
            if taken[j] or not mode.matches(d, g):
                continue
            dist = (d.cx - g.cx) ** 2 + (d.cy - g.cy) ** 2
            if dist < best_dist:
                best_dist, best_j = dist, j
        if best_j is not None:
            taken[best_j] = True
        records.append(MatchRecord(det_index=i, gt_index=best_j, confidence=d.confidence))
    for j, t in enumerate(taken):
        if not t:
            records.append(MatchRecord(det_index=None, gt_index=j, confidence=None))
    return records


def _curve_from_flags(flags: list[tuple[float, bool]], n_gt: int) -> list[tuple[float, float, float, float]]:
    """(threshold, P, R, F1) at each distinct confidence, descending."""
    flags = sorted(flags, key=lambda t: -t[0])
    curve = []
    tp = fp = 0
    i = 0
    while i < len(flags):
        thr = flags[i][0]
        while i < len(flags) and flags[i][0] == thr:
            if flags[i][1]:
                tp += 1
            else:
                fp += 1
            i += 1
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / n_gt if n_gt else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        curve.append((thr, p, r, f1))
    return curve


def _tp_flags(dets: list[Annotation], gts: list[Annotation],
              mode: EvalMode) -> list[tuple[float, bool]]:
    recs = match_detections(dets, gts, mode)
    return [(r.confidence, r.gt_index is not None) for r in recs if r.det_index is not None]


def pr_curve(dets: list[Annotation], gts: list[Annotation],
             mode: EvalMode) -> list[tuple[float, float, float, float]]:
    """Precision/recall/F1 swept over the distinct confidence values, descending."""
    return _curve_from_flags(_tp_flags(dets, gts, mode), len(gts))


def ap_from_curve(curve: list[tuple[float, float, float, float]]) -> float:
    """All-point interpolated AP from a descending-threshold PR curve."""
    if not curve:
        return 0.0
    ap = 0.0
    prev_r = 0.0
    # max precision at recall >= R_i: scan from the high-recall end
    max_p_from = [0.0] * len(curve)
    running = 0.0
    for i in range(len(curve) - 1, -1, -1):
        running = max(running, curve[i][1])
        max_p_from[i] = running
    for i, (_, _, r, _) in enumerate(curve):
        ap += (r - prev_r) * max_p_from[i]
        prev_r = r
    return ap


def ap50(dets: list[Annotation], gts: list[Annotation], mode: EvalMode) -> float:
    """Average precision under the given matching criterion (0.0 when empty)."""
    return ap_from_curve(pr_curve(dets, gts, mode))


def f1_optimal_threshold(dets: list[Annotation], gts: list[Annotation],
                         mode: EvalMode) -> tuple[float, float]:
    """(threshold, F1) of the curve point with maximal F1; ties go to the
    highest threshold."""
    curve = pr_curve(dets, gts, mode)
    if not curve:
        return (1.0, 0.0)
    best_thr, best_f1 = curve[0][0], curve[0][3]
    for thr, _, _, f1 in curve[1:]:
        if f1 > best_f1:
            best_thr, best_f1 = thr, f1
    return (best_thr, best_f1)


@dataclass
class EvalReport:
    ap50: float
    pr_curve: list[tuple[float, float, float, float]]
    best_f1: float
    best_threshold: float
    per_image: dict[str, list[MatchRecord]]
    mode: EvalMode
    empty_evaluation: bool = False  # no gts and no detections anywhere

    def to_json(self) -> dict:
        return {
            "ap50": self.ap50,
            "best_f1": self.best_f1,
            "best_threshold": self.best_threshold,
            "mode": {"kind": self.mode.kind, "radius": self.mode.radius,
                     "a": self.mode.a, "alpha": self.mode.alpha},
            "empty_evaluation": self.empty_evaluation,
            "pr_curve": [{"threshold": t, "precision": p, "recall": r, "f1": f}
                         for t, p, r, f in self.pr_curve],
            "n_images": len(self.per_image),
        }


def evaluate_manifests(pred: DatasetManifest, gt: DatasetManifest,
                       mode: EvalMode) -> EvalReport:
    """Per-image matching pooled into one global curve and AP."""
    pred_by_path = {e.image_path: e for e in pred}
    gt_by_path = {e.image_path: e for e in gt}
    if set(pred_by_path) != set(gt_by_path):
        only_pred = set(pred_by_path) - set(gt_by_path)
        only_gt = set(gt_by_path) - set(pred_by_path)
        raise ValueError(f"image sets differ (pred-only: {len(only_pred)}, gt-only: {len(only_gt)})")
    flags: list[tuple[float, bool]] = []
    per_image: dict[str, list[MatchRecord]] = {}
    n_gt = 0
    for path in sorted(pred_by_path):
        dets = pred_by_path[path].annotations
        gts = gt_by_path[path].annotations
        recs = match_detections(dets, gts, mode)
        per_image[path] = recs
        n_gt += len(gts)
        flags.extend((r.confidence, r.gt_index is not None)
                     for r in recs if r.det_index is not None)
    curve = _curve_from_flags(flags, n_gt)
    ap = ap_from_curve(curve)
    if curve:
        best_thr, best_f1 = curve[0][0], curve[0][3]
        for thr, _, _, f1 in curve[1:]:
            if f1 > best_f1:
                best_thr, best_f1 = thr, f1
    else:
        best_thr, best_f1 = 1.0, 0.0
    return EvalReport(ap50=ap, pr_curve=curve, best_f1=best_f1,
                      best_threshold=best_thr, per_image=per_image, mode=mode,
                      empty_evaluation=(n_gt == 0 and not flags))
