"""Training-time augmentation: random crop, horizontal flip, resize.

Polygons are transformed with the pixels.  Cropping clips each polygon to
the window and drops instances that lose too much of their area; a crop is
retried until at least one readable instance survives, falling back to the
full image.
"""

from __future__ import annotations

import cv2
import numpy as np

from .annotations import TextInstance
from .datasets import Sample
from .rasterize import polygon_area

KEEP_AREA_FRACTION = 0.3


def _clip_axis(points: list[np.ndarray], axis: int, bound: float,
               keep_below: bool) -> list[np.ndarray]:
    """Sutherland-Hodgman step against one axis-aligned half-plane."""
    def inside(p):
        return p[axis] <= bound if keep_below else p[axis] >= bound

    def crossing(p, q):
        t = (bound - p[axis]) / (q[axis] - p[axis])
        return p + t * (q - p)

    out: list[np.ndarray] = []
    n = len(points)
    for i in range(n):
        cur, nxt = points[i], points[(i + 1) % n]
        if inside(cur):
            out.append(cur)
            if not inside(nxt):
                out.append(crossing(cur, nxt))
        elif inside(nxt):
            out.append(crossing(cur, nxt))
    return out


def clip_polygon_to_rect(points: np.ndarray, w: float, h: float) -> np.ndarray:
    """Clip against [0, w] x [0, h]; may return fewer than 3 vertices."""
    pts = [p.astype(np.float64) for p in np.asarray(points)]
    for axis, bound, keep_below in ((0, 0.0, False), (0, float(w), True),
                                    (1, 0.0, False), (1, float(h), True)):
        pts = _clip_axis(pts, axis, bound, keep_below)
        if not pts:
            break
    return np.array(pts).reshape(-1, 2)


def hflip_sample(sample: Sample) -> Sample:
    """Mirror pixels and polygons about the vertical center line."""
    w = sample.width
    instances = [
        TextInstance(points=np.column_stack([w - i.points[:, 0],
                                             i.points[:, 1]]),
                     script=i.script, transcription=i.transcription,
                     ignore=i.ignore)
        for i in sample.instances
    ]
    return Sample(image=sample.image[:, ::-1].copy(), instances=instances,
                  id=sample.id)


def crop_sample(sample: Sample, x0: int, y0: int, cw: int, ch: int,
                keep_fraction: float = KEEP_AREA_FRACTION) -> Sample:
    """Window crop; instances keep their label but lose clipped geometry.
    An instance is dropped when under `keep_fraction` of its area survives."""
    image = sample.image[y0:y0 + ch, x0:x0 + cw].copy()
    instances = []
    for inst in sample.instances:
        shifted = inst.points - np.array([x0, y0], dtype=np.float64)
        clipped = clip_polygon_to_rect(shifted, cw, ch)
        if clipped.shape[0] < 3:
            continue
        original = polygon_area(inst.points)
        if original > 0 and polygon_area(clipped) / original < keep_fraction:
            continue
        instances.append(TextInstance(points=clipped, script=inst.script,
                                      transcription=inst.transcription,
                                      ignore=inst.ignore))
    return Sample(image=image, instances=instances, id=sample.id)


def resize_sample(sample: Sample, out_size: int) -> Sample:
    sx = out_size / sample.width
    sy = out_size / sample.height
    image = cv2.resize(sample.image, (out_size, out_size),
                       interpolation=cv2.INTER_LINEAR)
    instances = [
        TextInstance(points=i.points * np.array([sx, sy]), script=i.script,
                     transcription=i.transcription, ignore=i.ignore)
        for i in sample.instances
    ]
    return Sample(image=image, instances=instances, id=sample.id)


def augment(sample: Sample, seed: int, out_size: int = 512,
            keep_fraction: float = KEEP_AREA_FRACTION, flip_p: float = 0.5,
            min_scale: float = 0.5, retries: int = 10) -> Sample:
    """Random crop keeping at least one readable instance, coin-flip mirror,
    then resize to out_size x out_size."""
    rng = np.random.Generator(np.random.PCG64(seed))
    h, w = sample.height, sample.width
    out = sample
    for _ in range(retries):
        cw = max(32, int(round(w * rng.uniform(min_scale, 1.0))))
        ch = max(32, int(round(h * rng.uniform(min_scale, 1.0))))
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        candidate = crop_sample(sample, x0, y0, cw, ch, keep_fraction)
        if any(not i.ignore for i in candidate.instances):
            out = candidate
            break
    if rng.random() < flip_p:
        out = hflip_sample(out)
    return resize_sample(out, out_size)
