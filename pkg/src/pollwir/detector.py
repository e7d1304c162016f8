"""
Baseline vehicle detector built on polarisation contrast.

Man-made surfaces emit more strongly polarised LWIR than vegetation, so
thresholding the degree of linear polarisation and boxing the connected
regions is a reasonable classical baseline for the evaluation harness.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .eval import BoundingBox, Detection, iou
from .polarimetry import PolarFrame

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class BlobParams:
    p_threshold: float = 0.5
    min_area: int = 16
    connectivity: int = 8
    nms_iou: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.p_threshold < 1.0):
            raise ValidationError(f"p_threshold must lie in (0, 1), got {self.p_threshold!r}")
        if int(self.min_area) != self.min_area or self.min_area < 1:
            raise ValidationError(f"min_area must be an integer >= 1, got {self.min_area!r}")
        if self.connectivity not in _STRUCTURES:
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity!r}")
        if not (0.0 < self.nms_iou <= 1.0):
            raise ValidationError(f"nms_iou must lie in (0, 1], got {self.nms_iou!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "BlobParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown detector parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _nms_key(d: Detection):
    return (-d.score, d.frame_id, d.box.as_tuple())


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """
    Greedy non-maximum suppression.

    Keeps the best remaining detection and drops every other one in the same
    frame and class that overlaps it with IoU above ``iou_threshold``. Equal
    scores are broken by frame_id, then box coordinates, so the result is
    deterministic.
    """
    remaining = sorted(dets, key=_nms_key)
    keep: list[Detection] = []
    while remaining:
        best = remaining.pop(0)
        keep.append(best)
        remaining = [
            d
            for d in remaining
            if d.frame_id != best.frame_id
            or d.class_label != best.class_label
            or iou(d.box, best.box) <= iou_threshold
        ]
    return keep


def detect_blobs(
    polar: PolarFrame,
    params: BlobParams | None = None,
    frame_id: str = "",
    class_label: str = "vehicle",
) -> list[Detection]:
    """
    One box per connected region of ``valid & (P >= p_threshold)``.

    Regions smaller than ``min_area`` pixels are dropped. A box spans the
    pixel edges of its region, so pixel ``(r, c)`` contributes
    ``[c, c + 1) x [r, r + 1)``. The score is the mean ``P`` over the region.
    """
    params = params or BlobParams()
    mask = polar.valid & (polar.P >= params.p_threshold)
    labels, n = ndimage.label(mask, structure=_STRUCTURES[params.connectivity])
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    areas = ndimage.sum_labels(np.ones_like(polar.P), labels, index)
    means = ndimage.mean(polar.P, labels, index)
    dets = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[lab - 1] < params.min_area:
            continue
        rows, cols = sl
        box = BoundingBox(float(cols.start), float(rows.start), float(cols.stop), float(rows.stop))
        score = float(min(1.0, max(params.p_threshold, means[lab - 1])))
        dets.append(Detection(frame_id, class_label, box, score))
    return nms(dets, params.nms_iou)
