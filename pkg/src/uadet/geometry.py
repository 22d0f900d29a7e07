"""Axis-aligned boxes in normalized center/size form and overlap helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import iou_matrix as _iou_matrix


class InvalidBoxError(ValueError):
    """A box with non-positive width or height."""


class EmptyBoxError(ValueError):
    """Clipping removed the whole box."""


@dataclass(frozen=True)
class Box:
    """Rectangle ``(cx, cy, w, h)`` in normalized image coordinates."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box needs w > 0 and h > 0, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1, y1, x2, y2):
        return cls(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1)

    @classmethod
    def from_array(cls, arr):
        cx, cy, w, h = (float(v) for v in arr)
        return cls(cx, cy, w, h)

    def corners(self):
        return (self.cx - 0.5 * self.w, self.cy - 0.5 * self.h,
                self.cx + 0.5 * self.w, self.cy + 0.5 * self.h)

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @property
    def area(self):
        return self.w * self.h


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes."""
    for box in (a, b):
        if not (box.w > 0 and box.h > 0):
            raise InvalidBoxError(f"degenerate box {box}")
    ax1, ay1 = a.cx - 0.5 * a.w, a.cy - 0.5 * a.h
    ax2, ay2 = a.cx + 0.5 * a.w, a.cy + 0.5 * a.h
    bx1, by1 = b.cx - 0.5 * b.w, b.cy - 0.5 * b.h
    bx2, by2 = b.cx + 0.5 * b.w, b.cy + 0.5 * b.h
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    # areas from the corner extents so that iou(b, b) is exactly 1
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)


def clip(b: Box) -> Box:
    """Clip a box to the unit square.

    Boxes already inside are returned as-is.  Raises :class:`EmptyBoxError`
    when nothing of the box remains.
    """
    x1, y1, x2, y2 = b.corners()
    if x1 >= 0.0 and y1 >= 0.0 and x2 <= 1.0 and y2 <= 1.0:
        return b
    x1, y1 = max(x1, 0.0), max(y1, 0.0)
    x2, y2 = min(x2, 1.0), min(y2, 1.0)
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        raise EmptyBoxError(f"{b} lies outside the unit square")
    return Box.from_corners(x1, y1, x2, y2)


def iou_matrix(a, b):
    """Pairwise IoU between two ``(N, 4)`` / ``(M, 4)`` arrays of cx, cy, w, h."""
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    if (a[:, 2:] <= 0).any() or (b[:, 2:] <= 0).any():
        raise InvalidBoxError("degenerate box in iou_matrix input")
    return _iou_matrix(a, b)


def clip_array(boxes, min_size=1e-3):
    """Vectorized clip of ``(N, 4)`` boxes; sizes are floored at ``min_size``."""
    boxes = np.asarray(boxes, dtype=np.float64)
    x1 = np.clip(boxes[:, 0] - 0.5 * boxes[:, 2], 0.0, 1.0)
    y1 = np.clip(boxes[:, 1] - 0.5 * boxes[:, 3], 0.0, 1.0)
    x2 = np.clip(boxes[:, 0] + 0.5 * boxes[:, 2], 0.0, 1.0)
    y2 = np.clip(boxes[:, 1] + 0.5 * boxes[:, 3], 0.0, 1.0)
    w = np.maximum(x2 - x1, min_size)
    h = np.maximum(y2 - y1, min_size)
    return np.stack([0.5 * (x1 + x2), 0.5 * (y1 + y2), w, h], axis=1)


def encode(boxes, refs):
    """Regression deltas of ``boxes`` relative to reference boxes (both cx, cy, w, h)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    return np.stack([
        (boxes[..., 0] - refs[..., 0]) / refs[..., 2],
        (boxes[..., 1] - refs[..., 1]) / refs[..., 3],
        np.log(boxes[..., 2] / refs[..., 2]),
        np.log(boxes[..., 3] / refs[..., 3]),
    ], axis=-1)


_MAX_LOG_SCALE = np.log(8.0)


def decode(deltas, refs):
    """Inverse of :func:`encode`; log-scale deltas are clamped to avoid overflow."""
    deltas = np.asarray(deltas, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    dw = np.minimum(deltas[..., 2], _MAX_LOG_SCALE)
    dh = np.minimum(deltas[..., 3], _MAX_LOG_SCALE)
    return np.stack([
        refs[..., 0] + deltas[..., 0] * refs[..., 2],
        refs[..., 1] + deltas[..., 1] * refs[..., 3],
        refs[..., 2] * np.exp(dw),
        refs[..., 3] * np.exp(dh),
    ], axis=-1)
