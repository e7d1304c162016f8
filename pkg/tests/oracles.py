"""Independent reference computations used only by the tests.

None of these import the code paths they check. They favour obviousness
over speed: scalar loops, exact rationals, explicit enumeration.
"""

from __future__ import annotations

import colorsys
import math
from fractions import Fraction


def polar_scalar(I: float, Q: float, U: float, eps_I: float = 1e-6, eps_QU: float = 1e-6):
    """(P, phi, valid) for one pixel, straight from the formulas."""
    if I <= eps_I or (abs(Q) <= eps_QU and abs(U) <= eps_QU):
        return 0.0, 0.0, False
    P = min(1.0, math.sqrt(Q * Q + U * U) / I)
    phi = 0.5 * math.atan2(U, Q)
    if phi <= -math.pi / 2:
        phi += math.pi
    return P, phi, True


def box_iou_exact(a, b) -> Fraction:
    """IoU of (x0, y0, x1, y1) tuples as an exact rational."""
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return Fraction(0)
    inter = iw * ih
    area = lambda r: (r[2] - r[0]) * (r[3] - r[1])  # noqa: E731
    return inter / (area(a) + area(b) - inter)


def greedy_tp_count(dets, gts, iou_threshold) -> int:
    """Count TPs among ``dets`` (frame, box, score, index) under greedy VOC matching."""
    order = sorted(dets, key=lambda d: (-d[2], d[0], d[3]))
    used = set()
    tp = 0
    thr = Fraction(iou_threshold)
    for frame, box, _, _ in order:
        best, best_j = Fraction(-1), None
        for j, (gframe, gbox) in enumerate(gts):
            if gframe != frame or j in used:
                continue
            ov = box_iou_exact(box, gbox)
            if ov > best:
                best, best_j = ov, j
        if best_j is not None and best > thr:
            used.add(best_j)
            tp += 1
    return tp


def ap_by_threshold_enumeration(dets, gts, iou_threshold=0.5) -> float:
    """
    All-point AP by brute force.

    For every distinct score t, re-match the detections scoring >= t from
    scratch, giving (precision(t), recall(t)). Interpolated precision at t is
    the max precision over all thresholds at or below t; AP sums it times
    the recall gained at t.
    """
    n_gt = len(gts)
    if n_gt == 0 or not dets:
        return 0.0
    thresholds = sorted({d[2] for d in dets}, reverse=True)
    curve = []
    for t in thresholds:
        kept = [d for d in dets if d[2] >= t]
        tp = greedy_tp_count(kept, gts, iou_threshold)
        curve.append((Fraction(tp, len(kept)), Fraction(tp, n_gt)))
    total = Fraction(0)
    prev_recall = Fraction(0)
    for k, (_, recall) in enumerate(curve):
        interp = max(p for p, _ in curve[k:])
        total += (recall - prev_recall) * interp
        prev_recall = recall
    return float(total)


def hsv_pixel(h_deg: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb((h_deg / 360.0) % 1.0, s, v)
    return tuple(int(math.floor(c * 255 + 0.5)) for c in (r, g, b))
