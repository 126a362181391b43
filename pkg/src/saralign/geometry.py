"""Axis-aligned box geometry: IoU, five-region assignment, relative directions.

Boxes are half-open pixel intervals [x_min, x_max) x [y_min, y_max) with the
origin at the top-left corner and y increasing downward. Region rectangles
use half- and quarter-image boundaries; those are dyadic rationals, so all
the area arithmetic below is exact in 64-bit floats.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ValidationError


class RegionLabel(enum.Enum):
    """The five image regions, in fixed tie-break order."""

    UPPER_LEFT = "upper left"
    UPPER_RIGHT = "upper right"
    BOTTOM_LEFT = "bottom left"
    BOTTOM_RIGHT = "bottom right"
    CENTER = "center"


class Direction(enum.Enum):
    """Relative placement of one target with respect to another."""

    ABOVE = "above"
    BELOW = "below"
    LEFT = "left"
    RIGHT = "right"


_OPPOSITE = {
    Direction.ABOVE: Direction.BELOW,
    Direction.BELOW: Direction.ABOVE,
    Direction.LEFT: Direction.RIGHT,
    Direction.RIGHT: Direction.LEFT,
}


def opposite(direction: Direction) -> Direction:
    return _OPPOSITE[direction]


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Half-open rectangle in pixel coordinates, top-left origin."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def is_valid(self) -> bool:
        return self.x_min < self.x_max and self.y_min < self.y_max

    def within(self, width: float, height: float) -> bool:
        return 0 <= self.x_min and 0 <= self.y_min and self.x_max <= width and self.y_max <= height


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two valid boxes; 0.0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def region_boxes(width: float, height: float) -> dict[RegionLabel, BoundingBox]:
    """The five regions of a width x height image.

    The four quadrants are the half-width x half-height corner rectangles;
    the center region has half the width and half the height and is centered
    in the image (it overlaps all four quadrants).
    """
    w2, h2 = width * 0.5, height * 0.5
    w4, h4 = width * 0.25, height * 0.25
    return {
        RegionLabel.UPPER_LEFT: BoundingBox(0.0, 0.0, w2, h2),
        RegionLabel.UPPER_RIGHT: BoundingBox(w2, 0.0, width, h2),
        RegionLabel.BOTTOM_LEFT: BoundingBox(0.0, h2, w2, height),
        RegionLabel.BOTTOM_RIGHT: BoundingBox(w2, h2, width, height),
        RegionLabel.CENTER: BoundingBox(w4, h4, width - w4, height - h4),
    }


def assign_region(box: BoundingBox, width: float, height: float) -> RegionLabel:
    """Region with maximal IoU against the box.

    Ties are broken by the fixed order upper-left < upper-right <
    bottom-left < bottom-right < center.
    """
    best_label = None
    best_iou = -1.0
    for label, region in region_boxes(width, height).items():
        score = iou(box, region)
        if score > best_iou:
            best_label = label
            best_iou = score
    return best_label


def relative_direction(a: BoundingBox, b: BoundingBox) -> Direction:
    """Direction of box ``a`` relative to box ``b`` from center offsets.

    The axis with the larger absolute offset decides; the vertical axis wins
    exact ties. With the top-left origin, a smaller y means "above".
    """
    cxa, cya = a.center
    cxb, cyb = b.center
    dx = cxa - cxb
    dy = cya - cyb
    if dx == 0 and dy == 0:
        raise ValidationError("coincident targets: boxes share the same center")
    if abs(dy) >= abs(dx):
        return Direction.ABOVE if dy < 0 else Direction.BELOW
    return Direction.LEFT if dx < 0 else Direction.RIGHT
