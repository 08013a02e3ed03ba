"""Samples, dataset manifests and on-disk loading.

A manifest is a JSON file listing sample ids with image and ground-truth
paths relative to a data root.  The root is, in order of precedence: an
explicit argument, the VLTEXTDET_DATA_ROOT environment variable, or the
directory containing the manifest file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ..head import GroundTruthMask
from .annotations import TextInstance, parse_annotation_file
from .rasterize import rasterize

DATA_ROOT_ENV = "VLTEXTDET_DATA_ROOT"
KNOWN_FORMATS = ("mlt2019", "ctw1500", "synthetic")


class DatasetError(ValueError):
    """Missing files or malformed manifest."""


@dataclass
class Sample:
    """image: HxWx3 uint8 RGB; instances in image coordinates."""

    image: np.ndarray
    instances: list[TextInstance]
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DatasetError(f"image must be HxWx3, got {self.image.shape}")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def ground_truth_mask(self) -> GroundTruthMask:
        return rasterize(self.instances, self.height, self.width)


def clip_instances(instances: list[TextInstance], h: int, w: int) -> list[TextInstance]:
    """Clamp vertex coordinates into image bounds."""
    out = []
    for inst in instances:
        p = inst.points.copy()
        p[:, 0] = p[:, 0].clip(0, w)
        p[:, 1] = p[:, 1].clip(0, h)
        out.append(TextInstance(points=p, script=inst.script,
                                transcription=inst.transcription,
                                ignore=inst.ignore))
    return out


@dataclass
class ManifestEntry:
    id: str
    image: str
    gt: str


@dataclass
class DatasetManifest:
    root: Path
    format: str
    split: str
    entries: list[ManifestEntry] = field(default_factory=list)
    ctw_flavor: str = "absolute"

    def __post_init__(self):
        if self.format not in KNOWN_FORMATS:
            raise DatasetError(f"unknown dataset format {self.format!r}; "
                               f"known: {KNOWN_FORMATS}")
        self.root = Path(self.root)
        self.entries = [e if isinstance(e, ManifestEntry) else ManifestEntry(**e)
                        for e in self.entries]

    @property
    def sample_ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def verify(self) -> None:
        missing = []
        for e in self.entries:
            for rel in (e.image, e.gt):
                if not (self.root / rel).exists():
                    missing.append(str(self.root / rel))
        if missing:
            raise DatasetError(
                f"{len(missing)} referenced files missing, first few: "
                f"{missing[:5]}")

    def save(self, path: str | Path) -> None:
        doc = {
            "format": self.format,
            "split": self.split,
            "ctw_flavor": self.ctw_flavor,
            "samples": [{"id": e.id, "image": e.image, "gt": e.gt}
                        for e in self.entries],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path,
             data_root: str | Path | None = None) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: not valid JSON ({exc})") from None
        if data_root is None:
            data_root = os.environ.get(DATA_ROOT_ENV) or path.parent
        try:
            manifest = cls(
                root=Path(data_root),
                format=doc["format"],
                split=doc.get("split", "train"),
                ctw_flavor=doc.get("ctw_flavor", "absolute"),
                entries=[ManifestEntry(id=s["id"], image=s["image"], gt=s["gt"])
                         for s in doc["samples"]])
        except KeyError as exc:
            raise DatasetError(f"{path}: missing manifest key {exc}") from None
        manifest.verify()
        return manifest

    def load_sample(self, entry: ManifestEntry) -> Sample:
        image_path = self.root / entry.image
        image = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
        if image is None:
            raise DatasetError(f"cannot read image {image_path}")
        image = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
        instances = parse_annotation_file(self.root / entry.gt, self.format,
                                          self.ctw_flavor)
        h, w = image.shape[:2]
        return Sample(image=image, instances=clip_instances(instances, h, w),
                      id=entry.id)

    def load_all(self) -> list[Sample]:
        return [self.load_sample(e) for e in self.entries]

    def gt_by_id(self) -> dict[str, list[TextInstance]]:
        out = {}
        for e in self.entries:
            instances = parse_annotation_file(self.root / e.gt, self.format,
                                              self.ctw_flavor)
            out[e.id] = instances
        return out
