"""Dataset ingestion, rasterization, synthesis and augmentation."""

from .annotations import (
    AnnotationError,
    IGNORE_TRANSCRIPTION,
    TextInstance,
    parse_annotation_file,
    parse_ctw_line,
    parse_mlt_line,
    parse_polygon_line,
    serialize_ctw_line,
    serialize_mlt_line,
    serialize_polygon_line,
    write_annotation_file,
)
from .augment import augment, crop_sample, hflip_sample, resize_sample
from .datasets import (
    DATA_ROOT_ENV,
    DatasetError,
    DatasetManifest,
    ManifestEntry,
    Sample,
    clip_instances,
)
from .rasterize import fill_polygon_mask, polygon_area, rasterize
from .synth import GenerationError, SynthSpec, synthesize_sample, write_synthetic_dataset

__all__ = [
    "AnnotationError",
    "DATA_ROOT_ENV",
    "DatasetError",
    "DatasetManifest",
    "GenerationError",
    "IGNORE_TRANSCRIPTION",
    "ManifestEntry",
    "Sample",
    "SynthSpec",
    "TextInstance",
    "augment",
    "clip_instances",
    "crop_sample",
    "fill_polygon_mask",
    "hflip_sample",
    "parse_annotation_file",
    "parse_ctw_line",
    "parse_mlt_line",
    "parse_polygon_line",
    "polygon_area",
    "rasterize",
    "resize_sample",
    "serialize_ctw_line",
    "serialize_mlt_line",
    "serialize_polygon_line",
    "synthesize_sample",
    "write_annotation_file",
    "write_synthetic_dataset",
]
