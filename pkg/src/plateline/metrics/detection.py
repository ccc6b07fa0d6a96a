"""Detection-side losses: IoU, CIoU loss, and the weighted composite loss.

Boxes are stored corner-form (x_min, y_min, x_max, y_max) in one arbitrary
length unit; center-form conversion is a constructor helper.  The per-term
losses feeding the composite are caller inputs, never computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ValidationError


class DegenerateBox(ValidationError):
    """A box with zero or negative extent along either axis."""


class NegativeInput(ValidationError):
    """Loss terms and their weights must be finite and non-negative."""


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name, v in (
            ("x_min", self.x_min),
            ("y_min", self.y_min),
            ("x_max", self.x_max),
            ("y_max", self.y_max),
        ):
            if not math.isfinite(v):
                raise DegenerateBox(f"{name} must be finite, got {v!r}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise DegenerateBox(
                f"box must have positive extent, got "
                f"({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, height: float) -> "BBox":
        return cls(cx - width / 2, cy - height / 2, cx + width / 2, cy + height / 2)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    @property
    def area(self) -> float:
        return self.width * self.height


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def ciou_loss(pred: BBox, gt: BBox) -> float:
    """1 − IoU plus a normalized center-distance term plus an aspect-ratio term.

    The center distance is normalized by the squared diagonal of the
    smallest box enclosing both inputs.  The aspect term is
    v = (4/pi^2)(arctan(w_gt/h_gt) − arctan(w/h))^2 weighted by
    alpha = v/((1 − IoU) + v), with alpha taken as 0 when v is 0 so
    identical boxes score exactly 0.
    """
    overlap = iou(pred, gt)
    pcx, pcy = pred.center
    gcx, gcy = gt.center
    rho_sq = (pcx - gcx) ** 2 + (pcy - gcy) ** 2
    enclose_w = max(pred.x_max, gt.x_max) - min(pred.x_min, gt.x_min)
    enclose_h = max(pred.y_max, gt.y_max) - min(pred.y_min, gt.y_min)
    diag_sq = enclose_w**2 + enclose_h**2
    v = (4 / math.pi**2) * (
        math.atan(gt.width / gt.height) - math.atan(pred.width / pred.height)
    ) ** 2
    if v == 0.0:
        alpha = 0.0
    else:
        alpha = v / ((1.0 - overlap) + v)
    return (1.0 - overlap) + rho_sq / diag_sq + alpha * v


def yolo_composite_loss(
    l_box: float,
    l_cls: float,
    l_obj: float,
    lambda_box: float,
    lambda_cls: float,
    lambda_obj: float,
) -> float:
    """Weighted sum of the three per-term losses.

    The weights are mandatory: no published values exist to default to.
    """
    terms = {
        "l_box": l_box,
        "l_cls": l_cls,
        "l_obj": l_obj,
        "lambda_box": lambda_box,
        "lambda_cls": lambda_cls,
        "lambda_obj": lambda_obj,
    }
    for name, v in terms.items():
        if not math.isfinite(v) or v < 0:
            raise NegativeInput(f"{name} must be finite and >= 0, got {v!r}")
    return lambda_box * l_box + lambda_cls * l_cls + lambda_obj * l_obj
