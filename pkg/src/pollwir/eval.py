"""
Detection scoring: IoU matching, precision-recall curves and (m)AP.

Matching follows the VOC recipe with one deliberate difference: a match
needs IoU strictly greater than the threshold, so a box at exactly 0.5
overlap counts as a false positive.

Average precision is accumulated in exact rational arithmetic from the
integer tp/fp counts and only rounded to float at the end, so the result
does not depend on the order of floating-point operations.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"box coordinates must be finite: {vals}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError(f"box must have positive extent: {vals}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    frame_id: str
    class_label: str
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"score must lie in [0, 1], got {self.score!r}")


@dataclass(frozen=True)
class GroundTruth:
    frame_id: str
    class_label: str
    box: BoundingBox


@dataclass(frozen=True)
class PRPoint:
    score_threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


class APMethod(enum.Enum):
    ALL_POINT = "ALL_POINT"
    ELEVEN_POINT = "ELEVEN_POINT"


@dataclass
class ClassResult:
    ap: float
    pr: list[PRPoint]
    n_gt: int
    n_det: int


@dataclass
class EvalReport:
    per_class: dict[str, ClassResult]
    map: float
    iou_threshold: float
    ap_method: APMethod
    flags: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Matching:
    """Result of greedy matching.

    ``order`` lists detection indices in processing order (descending score);
    ``scores`` and ``is_tp`` follow that order. ``gt_matched`` follows the
    ground-truth input order.
    """

    order: np.ndarray
    scores: np.ndarray
    is_tp: np.ndarray
    gt_matched: np.ndarray

    def labels(self) -> np.ndarray:
        """TP flags in detection input order."""
        out = np.zeros(len(self.order), dtype=bool)
        out[self.order] = self.is_tp
        return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def detection_order(dets: Sequence[Detection]) -> list[int]:
    """Descending score; ties by frame_id, then input position."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].frame_id, i))


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_threshold: float = 0.5
) -> Matching:
    """
    Greedily label every detection TP or FP against ground truth.

    Detections are visited in :func:`detection_order`. Each one looks only at
    still-unmatched ground truth in its own frame; if the best overlap there
    is strictly above ``iou_threshold`` it claims that box (TP), otherwise it
    is an FP. Equal best overlaps resolve to the earlier ground truth.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold must lie in (0, 1], got {iou_threshold!r}")
    by_frame: dict[str, list[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        by_frame[g.frame_id].append(j)

    order = detection_order(dets)
    matched = np.zeros(len(gts), dtype=bool)
    is_tp = np.zeros(len(order), dtype=bool)
    for k, i in enumerate(order):
        d = dets[i]
        best, best_j = -1.0, -1
        for j in by_frame.get(d.frame_id, ()):
            if matched[j]:
                continue
            ov = iou(d.box, gts[j].box)
            if ov > best:
                best, best_j = ov, j
        if best_j >= 0 and best > iou_threshold:
            matched[best_j] = True
            is_tp[k] = True
    scores = np.array([dets[i].score for i in order], dtype=np.float64)
    return Matching(np.array(order, dtype=np.intp), scores, is_tp, matched)


def precision_recall(matching: Matching, n_gt: int) -> list[PRPoint]:
    """
    Cumulative precision/recall at every distinct score, highest first.

    Detections sharing a score enter the curve together. With ``n_gt == 0``
    recall is undefined; it is reported as 0 and the caller is expected to
    flag it.
    """
    if n_gt < 0:
        raise ValidationError("n_gt must be non-negative")
    points = []
    tp = fp = 0
    scores, is_tp = matching.scores, matching.is_tp
    n = len(scores)
    for k in range(n):
        if is_tp[k]:
            tp += 1
        else:
            fp += 1
        if k + 1 < n and scores[k + 1] == scores[k]:
            continue
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / n_gt if n_gt else 0.0
        points.append(PRPoint(float(scores[k]), precision, recall, tp, fp, n_gt - tp))
    return points


def _exact_curve(pr: Sequence[PRPoint]) -> tuple[list[Fraction], list[Fraction]]:
    precisions = [Fraction(p.tp, p.tp + p.fp) if p.tp + p.fp else Fraction(1) for p in pr]
    recalls = [Fraction(p.tp, p.tp + p.fn) if p.tp + p.fn else Fraction(0) for p in pr]
    return precisions, recalls


def average_precision(pr: Sequence[PRPoint], method=APMethod.ALL_POINT) -> float:
    """
    Area under the interpolated PR curve.

    Interpolated precision at recall r is the best precision reached at any
    recall >= r. ``ALL_POINT`` integrates it over every recall step;
    ``ELEVEN_POINT`` averages it at recall 0, 0.1, ..., 1.0.
    """
    method = APMethod(method)
    if not pr:
        return 0.0
    precisions, recalls = _exact_curve(pr)
    envelope = list(precisions)
    for k in range(len(envelope) - 2, -1, -1):
        if envelope[k + 1] > envelope[k]:
            envelope[k] = envelope[k + 1]

    if method is APMethod.ALL_POINT:
        total = Fraction(0)
        prev = Fraction(0)
        for r, p in zip(recalls, envelope):
            if r > prev:
                total += (r - prev) * p
                prev = r
        return float(total)

    total = Fraction(0)
    k = 0
    for step in range(11):
        level = Fraction(step, 10)
        while k < len(recalls) and recalls[k] < level:
            k += 1
        if k < len(recalls):
            total += envelope[k]
    return float(total / 11)


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float = 0.5,
    method=APMethod.ALL_POINT,
) -> EvalReport:
    """
    Per-class AP and their mean over the classes present in ground truth.

    Detections in frames without ground truth simply match nothing. Classes
    that appear only among detections are reported (AP 0) and flagged but do
    not enter the mean.
    """
    method = APMethod(method)
    gt_classes = sorted({g.class_label for g in gts})
    all_classes = sorted(set(gt_classes) | {d.class_label for d in dets})
    per_class: dict[str, ClassResult] = {}
    flags: list[str] = []
    for cls in all_classes:
        cd = [d for d in dets if d.class_label == cls]
        cg = [g for g in gts if g.class_label == cls]
        m = match_detections(cd, cg, iou_threshold)
        pr = precision_recall(m, len(cg))
        if not cg:
            flags.append(f"class '{cls}': recall undefined, no ground truth; excluded from mAP")
            ap = 0.0
        else:
            ap = average_precision(pr, method)
        if not cd:
            flags.append(f"class '{cls}': no detections; empty PR curve")
        per_class[cls] = ClassResult(ap, pr, len(cg), len(cd))
    if gt_classes:
        mean_ap = sum(per_class[c].ap for c in gt_classes) / len(gt_classes)
    else:
        mean_ap = 0.0
        flags.append("no ground truth; mAP defined as 0")
    return EvalReport(per_class, mean_ap, float(iou_threshold), method, flags)
