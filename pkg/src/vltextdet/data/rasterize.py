"""Polygon-to-mask rasterization.

Fill rule: a pixel belongs to a polygon when its center (col + 0.5,
row + 0.5) is inside under the even-odd rule.  Edges crossing the scanline
are counted with a half-open vertical span so shared vertices are counted
once.
"""

from __future__ import annotations

import numpy as np

from ..head import GroundTruthMask
from .annotations import TextInstance


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area (absolute value)."""
    x = points[:, 0]
    y = points[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2)


def fill_polygon_mask(points: np.ndarray, h: int, w: int) -> np.ndarray:
    """Boolean (h, w) mask of pixels whose centers fall inside the polygon."""
    points = np.asarray(points, dtype=np.float64)
    mask = np.zeros((h, w), dtype=bool)
    if points.shape[0] < 3:
        return mask
    r0 = max(0, int(np.floor(points[:, 1].min() - 0.5)))
    r1 = min(h, int(np.ceil(points[:, 1].max() + 0.5)))
    c0 = max(0, int(np.floor(points[:, 0].min() - 0.5)))
    c1 = min(w, int(np.ceil(points[:, 0].max() + 0.5)))
    if r0 >= r1 or c0 >= c1:
        return mask
    ys = np.arange(r0, r1, dtype=np.float64) + 0.5
    xs = np.arange(c0, c1, dtype=np.float64) + 0.5
    inside = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    n = points.shape[0]
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        if y1 == y2:
            continue
        lo, hi = (y1, y2) if y1 < y2 else (y2, y1)
        rows = (ys >= lo) & (ys < hi)
        if not rows.any():
            continue
        # x where the edge crosses each covered scanline; a crossing to the
        # right of the pixel center toggles its parity.
        x_cross = x1 + (ys[rows] - y1) * (x2 - x1) / (y2 - y1)
        inside[rows] ^= xs[None, :] < x_cross[:, None]
    mask[r0:r1, c0:c1] = inside
    return mask


def rasterize(instances: list[TextInstance], h: int, w: int) -> GroundTruthMask:
    """Positive where any readable polygon covers the pixel; ignored where
    only unreadable ("###") polygons do."""
    positive = np.zeros((h, w), dtype=bool)
    ignored = np.zeros((h, w), dtype=bool)
    for inst in instances:
        target = ignored if inst.ignore else positive
        target |= fill_polygon_mask(inst.points, h, w)
    ignored &= ~positive
    return GroundTruthMask(positive=positive, ignore=ignored)
