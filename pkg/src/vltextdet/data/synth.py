"""Procedural desk-scale dataset: textured backgrounds with high-contrast
text-like regions.

Each instance is a tinted plate (rotated quad or curved band) filled with
short oriented strokes.  No fonts are involved; swap `synthesize_sample` for
a renderer-backed generator if letterforms are ever needed.  Everything is
driven by one numpy PCG64 stream, so a (seed, spec) pair always yields the
same sample down to the byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .annotations import TextInstance, write_annotation_file
from .datasets import DatasetManifest, ManifestEntry, Sample
from .rasterize import fill_polygon_mask

QUAD = "quad"
CURVED = "curved"
MIXED = "mixed"


class GenerationError(RuntimeError):
    """Region placement failed within the attempt budget."""


@dataclass
class SynthSpec:
    image_size: int = 128
    min_instances: int = 1
    max_instances: int = 3
    shape_family: str = QUAD
    min_density: float = 0.005
    max_density: float = 0.35
    placement_attempts: int = 100
    ignore_probability: float = 0.0

    def __post_init__(self):
        if self.shape_family not in (QUAD, CURVED, MIXED):
            raise ValueError(f"unknown shape family {self.shape_family!r}")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ValueError("need 1 <= min_instances <= max_instances")
        if self.image_size < 64:
            raise ValueError("image_size below 64 leaves no room for regions")
        if not 0.0 <= self.ignore_probability <= 1.0:
            raise ValueError("ignore_probability must be in [0, 1]")


def _rot(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _quad_polygon(rng: np.random.Generator, s: int) -> tuple[np.ndarray, float]:
    """Rotated rectangle: 4 vertices plus its long-axis angle."""
    cx = rng.uniform(0.25, 0.75) * s
    cy = rng.uniform(0.25, 0.75) * s
    a = rng.uniform(0.10, 0.22) * s
    b = rng.uniform(0.04, 0.10) * s
    angle = rng.uniform(-np.pi / 4, np.pi / 4)
    corners = np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
    points = corners @ _rot(angle).T + np.array([cx, cy])
    return points, angle


def _curved_polygon(rng: np.random.Generator, s: int) -> tuple[np.ndarray, float]:
    """Curved band around a quadratic bezier centerline: 14 vertices."""
    cx = rng.uniform(0.3, 0.7) * s
    cy = rng.uniform(0.3, 0.7) * s
    length = rng.uniform(0.35, 0.6) * s
    angle = rng.uniform(-np.pi / 4, np.pi / 4)
    bend = rng.uniform(-0.15, 0.15) * length
    half_h = rng.uniform(0.03, 0.06) * s
    direction = np.array([np.cos(angle), np.sin(angle)])
    normal = np.array([-direction[1], direction[0]])
    p0 = np.array([cx, cy]) - direction * length / 2
    p2 = np.array([cx, cy]) + direction * length / 2
    p1 = np.array([cx, cy]) + normal * bend
    t = np.linspace(0.0, 1.0, 7)[:, None]
    center = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
    deriv = 2 * (1 - t) * (p1 - p0) + 2 * t * (p2 - p1)
    tangent = deriv / np.linalg.norm(deriv, axis=1, keepdims=True)
    normals = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    top = center + normals * half_h
    bottom = center - normals * half_h
    points = np.concatenate([top, bottom[::-1]], axis=0)
    return points, angle


def _place_regions(rng: np.random.Generator, spec: SynthSpec
                   ) -> list[tuple[np.ndarray, float]]:
    s = spec.image_size
    count = int(rng.integers(spec.min_instances, spec.max_instances + 1))
    margin = 2.0
    accepted: list[tuple[np.ndarray, float]] = []
    shapes: list[ShapelyPolygon] = []
    for k in range(count):
        for _ in range(spec.placement_attempts):
            family = spec.shape_family
            if family == MIXED:
                family = QUAD if rng.random() < 0.5 else CURVED
            points, angle = (_quad_polygon(rng, s) if family == QUAD
                             else _curved_polygon(rng, s))
            if points.min() < margin or points.max() > s - margin:
                continue
            shape = ShapelyPolygon(points)
            if not shape.is_valid:
                continue
            if all(shape.distance(q) > 2.0 for q in shapes):
                accepted.append((points, angle))
                shapes.append(shape)
                break
        else:
            raise GenerationError(
                f"could not place region {k + 1}/{count} within "
                f"{spec.placement_attempts} attempts")
    return accepted


def _paint_strokes(image: np.ndarray, mask: np.ndarray, angle: float,
                   color: np.ndarray, rng: np.random.Generator) -> None:
    """Short bars perpendicular to the region axis, clipped to the region."""
    coords = np.argwhere(mask)
    if len(coords) == 0:
        return
    h, w = mask.shape
    stroke_dir = np.array([np.cos(angle + np.pi / 2), np.sin(angle + np.pi / 2)])
    n_strokes = int(rng.integers(4, 11))
    thickness = int(rng.integers(1, 3))
    length = max(3.0, 0.35 * np.sqrt(len(coords) / 4))
    centers = coords[rng.integers(0, len(coords), size=n_strokes)]
    for r, c in centers:
        steps = np.linspace(-length / 2, length / 2, int(2 * length) + 1)
        xs = c + 0.5 + steps * stroke_dir[0]
        ys = r + 0.5 + steps * stroke_dir[1]
        for t in range(-thickness + 1, thickness):
            cc = np.round(xs + t * stroke_dir[1]).astype(int).clip(0, w - 1)
            rr = np.round(ys - t * stroke_dir[0]).astype(int).clip(0, h - 1)
            keep = mask[rr, cc]
            image[rr[keep], cc[keep]] = color


def synthesize_sample(seed: int, spec: SynthSpec) -> Sample:
    """Deterministic sample: background, tinted regions, strokes, polygons."""
    rng = np.random.Generator(np.random.PCG64(seed))
    s = spec.image_size
    color_a = rng.uniform(60, 200, size=3)
    color_b = rng.uniform(60, 200, size=3)
    ramp = (np.linspace(0, 1, s)[:, None] + np.linspace(0, 1, s)[None, :]) / 2
    base = color_a[None, None, :] * (1 - ramp[:, :, None]) \
        + color_b[None, None, :] * ramp[:, :, None]
    noise = rng.normal(0.0, 6.0, size=(s, s, 3))
    image = base + noise

    regions = _place_regions(rng, spec)
    instances = []
    for points, angle in regions:
        mask = fill_polygon_mask(points, s, s)
        dark_text = rng.random() < 0.5
        if dark_text:
            plate = rng.uniform(170, 240, size=3)
            stroke = rng.uniform(10, 60, size=3)
        else:
            plate = rng.uniform(15, 80, size=3)
            stroke = rng.uniform(190, 250, size=3)
        image[mask] = 0.3 * image[mask] + 0.7 * plate[None, :]
        _paint_strokes(image, mask, angle, stroke, rng)
        ignore = bool(rng.random() < spec.ignore_probability)
        instances.append(TextInstance(
            points=points, script="Synth",
            transcription="###" if ignore else "text", ignore=ignore))

    image = np.clip(image, 0, 255).astype(np.uint8)
    return Sample(image=image, instances=instances, id=f"synth_{seed:06d}")


def write_synthetic_dataset(out_dir: str | Path, count: int, spec: SynthSpec,
                            base_seed: int = 0, split: str = "train") -> Path:
    """Images + per-image GT files + manifest.json; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        sample = synthesize_sample(base_seed + i, spec)
        image_rel = f"images/{sample.id}.png"
        gt_rel = f"gt/{sample.id}.txt"
        bgr = cv2.cvtColor(sample.image, cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(out_dir / image_rel), bgr):
            raise OSError(f"could not write {out_dir / image_rel}")
        write_annotation_file(out_dir / gt_rel, sample.instances, "synthetic")
        entries.append(ManifestEntry(id=sample.id, image=image_rel, gt=gt_rel))
    manifest = DatasetManifest(root=out_dir, format="synthetic", split=split,
                               entries=entries)
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path
