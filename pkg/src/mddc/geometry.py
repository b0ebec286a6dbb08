"""Box value types and IoU arithmetic.

Boxes are stored center-format in normalized image coordinates
(cx, cy, w, h), all 64-bit floats. Everything in this module is a pure
function on immutable values and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: center (cx, cy) and size (w, h) as image fractions.

    Centers must lie in [0, 1] and sizes in (0, 1]; the part of the box
    inside the unit square must have positive area. Extents may overhang
    the square slightly (parsers clip before constructing).
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size out of range: ({self.w}, {self.h})")
        x1, y1, x2, y2 = self.corners()
        if min(x2, 1.0) - max(x1, 0.0) <= 0.0 or min(y2, 1.0) - max(y1, 0.0) <= 0.0:
            raise ValueError("box has no area inside the unit square")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) extent of the box."""
        hw = self.w / 2.0
        hh = self.h / 2.0
        return self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotation: a box, its class, and a uid stable within one snapshot."""

    box: BoundingBox
    class_id: int
    box_uid: str

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"negative class id: {self.class_id}")


@dataclass(frozen=True)
class PredictedBox:
    """A detector output: box, class, confidence score, and uid."""

    box: BoundingBox
    class_id: int
    score: float
    box_uid: str

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"negative class id: {self.class_id}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score out of range: {self.score}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes.

    Returns 0.0 for disjoint boxes and exactly 1.0 only for identical
    coordinates. Symmetric in its arguments.
    """
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    if iw <= 0.0:
        return 0.0
    ih = min(ay2, by2) - max(ay1, by1)
    if ih <= 0.0:
        return 0.0
    inter = iw * ih
    # areas from the same corner arithmetic, so identical boxes come out
    # at exactly 1.0 and nothing ever exceeds it
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def iou_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Clustering distance 1 - iou(a, b); zero iff the boxes coincide."""
    return 1.0 - iou(a, b)


def clip_box(cx: float, cy: float, w: float, h: float) -> BoundingBox | None:
    """Clip a raw center-format extent to the unit square.

    Values already inside the square pass through untouched (bit-exact);
    returns None when nothing with positive area remains. Used by parsers
    and samplers so stored boxes always satisfy the BoundingBox invariants.
    """
    x1 = cx - w / 2.0
    y1 = cy - h / 2.0
    x2 = cx + w / 2.0
    y2 = cy + h / 2.0
    if x1 >= 0.0 and y1 >= 0.0 and x2 <= 1.0 and y2 <= 1.0:
        return BoundingBox(cx, cy, w, h)
    x1, y1 = max(x1, 0.0), max(y1, 0.0)
    x2, y2 = min(x2, 1.0), min(y2, 1.0)
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        return None
    return BoundingBox((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
