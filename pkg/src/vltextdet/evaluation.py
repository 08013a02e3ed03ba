"""IoU-based detection scoring.

Protocol: detections covering an unreadable ("###") ground-truth region are
removed from scoring, the rest are matched one-to-one to readable regions
greedily in descending-IoU order (ties broken by lower detection index, then
lower ground-truth index), and a pair counts as a match when its IoU reaches
the threshold.  Precision is matches over scored detections, recall is
matches over readable regions; an empty denominator yields 0.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.errors import GEOSException
from shapely.geometry import Polygon as ShapelyPolygon

from .data.annotations import TextInstance
from .postprocess import Detection

DEFAULT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


def _as_shape(points: np.ndarray):
    """Shapely polygon, repaired if self-touching; None when degenerate."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 3 or points.shape[1] != 2:
        return None
    try:
        shape = ShapelyPolygon(points)
        if not shape.is_valid:
            shape = shape.buffer(0)
    except (GEOSException, ValueError):
        return None
    if shape.is_empty or shape.area == 0.0:
        return None
    return shape


def polygon_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two polygons; symmetric, in [0, 1]."""
    sa, sb = _as_shape(a), _as_shape(b)
    if sa is None or sb is None:
        warnings.warn("degenerate polygon in IoU; returning 0", stacklevel=2)
        return 0.0
    try:
        inter = sa.intersection(sb).area
    except GEOSException:
        warnings.warn("polygon clipping failed; returning 0", stacklevel=2)
        return 0.0
    union = sa.area + sb.area - inter
    if union <= 0.0:
        return 0.0
    return float(inter / union)


def _intersection_over_first(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = _as_shape(a), _as_shape(b)
    if sa is None or sb is None:
        return 0.0
    try:
        return float(sa.intersection(sb).area / sa.area)
    except GEOSException:
        return 0.0


def filter_ignored_detections(dets: list[Detection],
                              gts: list[TextInstance]) -> list[Detection]:
    """Drop detections that mostly cover an ignored region (coverage of the
    detection's own area above 0.5)."""
    ignored = [g for g in gts if g.ignore]
    if not ignored:
        return list(dets)
    kept = []
    for d in dets:
        if all(_intersection_over_first(d.polygon, g.points) <= 0.5
               for g in ignored):
            kept.append(d)
    return kept


def iou_matrix(dets: list[Detection], gts: list[TextInstance]) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            out[i, j] = polygon_iou(d.polygon, g.points)
    return out


def greedy_match(iou: np.ndarray, iou_threshold: float) -> list[tuple[int, int, float]]:
    """One-to-one pairs (det_idx, gt_idx, iou), best IoU first."""
    candidates = [(-iou[i, j], i, j)
                  for i in range(iou.shape[0]) for j in range(iou.shape[1])
                  if iou[i, j] >= iou_threshold]
    candidates.sort()
    det_used = set()
    gt_used = set()
    pairs = []
    for neg, i, j in candidates:
        if i in det_used or j in gt_used:
            continue
        det_used.add(i)
        gt_used.add(j)
        pairs.append((i, j, -neg))
    return pairs


@dataclass
class ThresholdScore:
    iou_threshold: float
    precision: float
    recall: float
    f_score: float
    matched: int
    num_dets: int
    num_gts: int

    @classmethod
    def from_counts(cls, iou_threshold: float, matched: int, num_dets: int,
                    num_gts: int) -> "ThresholdScore":
        p = matched / num_dets if num_dets > 0 else 0.0
        r = matched / num_gts if num_gts > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(iou_threshold=iou_threshold, precision=p, recall=r,
                   f_score=f, matched=matched, num_dets=num_dets,
                   num_gts=num_gts)


@dataclass
class EvalReport:
    entries: list[ThresholdScore] = field(default_factory=list)

    def f_at(self, iou_threshold: float) -> float:
        for e in self.entries:
            if abs(e.iou_threshold - iou_threshold) < 1e-9:
                return e.f_score
        raise KeyError(f"no entry for IoU threshold {iou_threshold}")

    def to_dict(self) -> dict:
        return {"entries": [vars(e) for e in self.entries]}

    def format_table(self) -> str:
        header = (f"{'IoU':>5} {'Precision':>10} {'Recall':>10} "
                  f"{'F-score':>10} {'Matched':>8} {'Dets':>6} {'GTs':>6}")
        lines = [header, "-" * len(header)]
        for e in self.entries:
            lines.append(
                f"{e.iou_threshold:>5.2f} {e.precision:>10.4f} "
                f"{e.recall:>10.4f} {e.f_score:>10.4f} {e.matched:>8d} "
                f"{e.num_dets:>6d} {e.num_gts:>6d}")
        return "\n".join(lines)

    def save(self, prefix: str | Path) -> tuple[Path, Path]:
        """Writes `<prefix>.json` (machine) and `<prefix>.txt` (table)."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        json_path = prefix.with_suffix(".json")
        txt_path = prefix.with_suffix(".txt")
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        txt_path.write_text(self.format_table() + "\n")
        return json_path, txt_path


def image_match_counts(dets: list[Detection], gts: list[TextInstance],
                       thresholds=DEFAULT_THRESHOLDS) -> dict[float, tuple[int, int, int]]:
    """Per-threshold (matched, scored_dets, readable_gts) for one image."""
    scored = filter_ignored_detections(dets, gts)
    readable = [g for g in gts if not g.ignore]
    iou = iou_matrix(scored, readable)
    return {t: (len(greedy_match(iou, t)), len(scored), len(readable))
            for t in thresholds}


def match_and_score(dets: list[Detection], gts: list[TextInstance],
                    iou_threshold: float) -> ThresholdScore:
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_threshold}")
    counts = image_match_counts(dets, gts, (iou_threshold,))
    return ThresholdScore.from_counts(iou_threshold, *counts[iou_threshold])


def f_at_thresholds(dets: list[Detection], gts: list[TextInstance],
                    thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    counts = image_match_counts(dets, gts, thresholds)
    return EvalReport(entries=[
        ThresholdScore.from_counts(t, *counts[t]) for t in thresholds])


def evaluate_detections(per_image_dets: dict[str, list[Detection]],
                        per_image_gts: dict[str, list[TextInstance]],
                        thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Micro-averaged scores: counts are summed over images, then P/R/F
    computed once per threshold."""
    extra = sorted(set(per_image_dets) - set(per_image_gts))
    if extra:
        raise KeyError(f"detections for unknown image ids: {extra[:5]}")
    totals = {t: [0, 0, 0] for t in thresholds}
    for image_id, gts in per_image_gts.items():
        dets = per_image_dets.get(image_id, [])
        for t, (m, nd, ng) in image_match_counts(dets, gts, thresholds).items():
            totals[t][0] += m
            totals[t][1] += nd
            totals[t][2] += ng
    return EvalReport(entries=[
        ThresholdScore.from_counts(t, *totals[t]) for t in thresholds])
