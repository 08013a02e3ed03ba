"""From probability maps to polygon detections.

The map is thresholded, split into 8-connected components, and each component
becomes one polygon: a rotated rectangle in "quad" mode, or a simplified
outline with at most 14 vertices in "polygon14" mode.  Output order is fixed
(top edge, then left edge) so repeated runs produce identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .head import SimilarityMap

MAX_POLYGON_VERTICES = 14


@dataclass
class Detection:
    """polygon: (k, 2) float32 array of (x, y) vertices; score in [0, 1]."""

    polygon: np.ndarray
    score: float

    def __post_init__(self):
        p = np.asarray(self.polygon, dtype=np.float32)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
            raise ValueError(f"polygon must be (k>=3, 2), got {p.shape}")
        self.polygon = p
        self.score = float(self.score)


def binarize(sim: SimilarityMap, threshold: float = 0.5) -> np.ndarray:
    """Boolean text mask: probability at or above the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return sim.probabilities >= threshold


def _component_polygon(component: np.ndarray, mode: str) -> np.ndarray | None:
    """Outline one boolean component as (k, 2) float32 (x, y), or None."""
    contours, _ = cv2.findContours(component.astype(np.uint8),
                                   cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
    if not contours:
        return None
    contour = max(contours, key=cv2.contourArea)
    if mode == "quad":
        rect = cv2.minAreaRect(contour)
        return cv2.boxPoints(rect).astype(np.float32)
    if mode == "polygon14":
        eps = max(0.5, 0.002 * cv2.arcLength(contour, True))
        approx = cv2.approxPolyDP(contour, eps, True)
        while len(approx) > MAX_POLYGON_VERTICES:
            eps *= 1.5
            approx = cv2.approxPolyDP(contour, eps, True)
        if len(approx) < 3:
            return cv2.boxPoints(cv2.minAreaRect(contour)).astype(np.float32)
        return approx.reshape(-1, 2).astype(np.float32)
    raise ValueError(f"unknown polygon mode {mode!r}")


def extract_instances(mask: np.ndarray, probabilities: np.ndarray,
                      min_area: int = 16, mode: str = "quad") -> list[Detection]:
    """Turn a boolean mask into scored polygons.

    The score of a detection is the mean probability over its component's
    pixels.  Components smaller than `min_area` pixels are dropped.
    """
    if mask.shape != probabilities.shape:
        raise ValueError("mask and probability map must share a shape")
    n, labels, stats, _ = cv2.connectedComponentsWithStats(
        mask.astype(np.uint8), connectivity=8)
    h, w = mask.shape
    ordered = sorted(
        range(1, n),
        key=lambda lab: (stats[lab, cv2.CC_STAT_TOP],
                         stats[lab, cv2.CC_STAT_LEFT], lab))
    out = []
    for lab in ordered:
        if stats[lab, cv2.CC_STAT_AREA] < min_area:
            continue
        component = labels == lab
        polygon = _component_polygon(component, mode)
        if polygon is None:
            continue
        polygon[:, 0] = polygon[:, 0].clip(0, w - 1)
        polygon[:, 1] = polygon[:, 1].clip(0, h - 1)
        score = float(probabilities[component].mean())
        out.append(Detection(polygon=polygon, score=score))
    return out


def detections_from_map(sim: SimilarityMap, threshold: float = 0.5,
                        min_area: int = 16, mode: str = "quad") -> list[Detection]:
    return extract_instances(binarize(sim, threshold), sim.probabilities,
                             min_area=min_area, mode=mode)


def scale_detections(dets: list[Detection], sx: float, sy: float) -> list[Detection]:
    """Map detections to another resolution (x by sx, y by sy)."""
    out = []
    for d in dets:
        p = d.polygon.copy()
        p[:, 0] *= sx
        p[:, 1] *= sy
        out.append(Detection(polygon=p, score=d.score))
    return out


def format_detection_line(det: Detection) -> str:
    """One detection per line: x1,y1,...,xk,yk,score."""
    coords = ",".join(f"{v:.2f}" for xy in det.polygon for v in xy)
    return f"{coords},{det.score:.4f}"


def parse_detection_line(line: str) -> Detection:
    parts = line.strip().split(",")
    if len(parts) < 7 or len(parts) % 2 == 0:
        raise ValueError(f"detection line needs 2k+1 fields (k >= 3): {line!r}")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"non-numeric field in detection line: {line!r}") from None
    polygon = np.array(values[:-1], dtype=np.float32).reshape(-1, 2)
    return Detection(polygon=polygon, score=values[-1])


def save_detection_file(path: str | Path, dets: list[Detection]) -> None:
    lines = [format_detection_line(d) for d in dets]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_detection_file(path: str | Path) -> list[Detection]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(parse_detection_line(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: {exc}") from None
    return out


def save_detections(directory: str | Path,
                    per_image: dict[str, list[Detection]]) -> None:
    """One `<image id>.txt` file per image under `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, dets in per_image.items():
        save_detection_file(directory / f"{name}.txt", dets)


def load_detections(directory: str | Path) -> dict[str, list[Detection]]:
    directory = Path(directory)
    out: dict[str, list[Detection]] = {}
    for path in sorted(directory.glob("*.txt")):
        out[path.stem] = load_detection_file(path)
    return out
