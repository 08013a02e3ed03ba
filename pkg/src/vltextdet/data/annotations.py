"""Ground-truth annotation records and their on-disk text formats.

Two line grammars are supported:

* quad lines: ``x1,y1,...,x4,y4,script,transcription`` with exactly four
  vertices; the transcription may itself contain commas, so fields are split
  from the left a fixed number of times.
* 14-vertex lines: 28 coordinates, then an optional transcription.  The
  coordinates are either absolute, or (legacy flavor) a 4-number bounding box
  followed by 28 offsets relative to its top-left corner.

A transcription of ``###`` marks an unreadable instance; such instances are
ignored by both training and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IGNORE_TRANSCRIPTION = "###"


class AnnotationError(ValueError):
    """Malformed annotation line or record."""


@dataclass
class TextInstance:
    """One labelled text region."""

    points: np.ndarray
    script: str | None = None
    transcription: str | None = None
    ignore: bool = False

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
            raise ValueError(f"points must be (k>=3, 2), got {p.shape}")
        self.points = p


def _format_number(v: float) -> str:
    """Integers as integers, everything else via repr (round-trips exactly)."""
    if v == int(v):
        return str(int(v))
    return repr(float(v))


def _parse_coords(parts: list[str], where: str) -> np.ndarray:
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise AnnotationError(f"{where}: non-numeric coordinate") from None
    return np.array(values, dtype=np.float64).reshape(-1, 2)


def _check_single_line(text: str | None) -> None:
    if text is not None and ("\n" in text or "\r" in text):
        raise AnnotationError("field must not contain line breaks")


# ---- quad (MLT-2019 style) ----------------------------------------------

def parse_mlt_line(line: str, where: str = "line") -> TextInstance:
    """``x1,y1,...,x4,y4,script,transcription``, transcription split last."""
    parts = line.rstrip("\n").split(",", 9)
    if len(parts) < 10:
        raise AnnotationError(
            f"{where}: expected 10 comma-separated fields, got {len(parts)}")
    points = _parse_coords(parts[:8], where)
    script, transcription = parts[8], parts[9]
    return TextInstance(points=points, script=script,
                        transcription=transcription,
                        ignore=transcription == IGNORE_TRANSCRIPTION)


def serialize_mlt_line(inst: TextInstance) -> str:
    if inst.points.shape[0] != 4:
        raise AnnotationError(
            f"quad format needs exactly 4 vertices, got {inst.points.shape[0]}")
    return serialize_polygon_line(inst)


# ---- generalized polygon lines (same grammar, any vertex count) ----------

def parse_polygon_line(line: str, where: str = "line") -> TextInstance:
    """Variable-vertex variant of the quad grammar: 2k coords, script, text.

    Used by the synthetic dataset, whose curved instances carry 14 vertices.
    The coordinate block ends at the first non-numeric field.
    """
    parts = line.rstrip("\n").split(",")
    n_coords = 0
    for p in parts:
        try:
            float(p)
            n_coords += 1
        except ValueError:
            break
    if n_coords % 2 == 1:
        n_coords -= 1
    if n_coords < 6 or len(parts) < n_coords + 2:
        raise AnnotationError(
            f"{where}: expected 2k>=6 coordinates then script and transcription")
    points = _parse_coords(parts[:n_coords], where)
    script = parts[n_coords]
    transcription = ",".join(parts[n_coords + 1:])
    return TextInstance(points=points, script=script,
                        transcription=transcription,
                        ignore=transcription == IGNORE_TRANSCRIPTION)


def serialize_polygon_line(inst: TextInstance) -> str:
    script = inst.script if inst.script is not None else "None"
    transcription = (inst.transcription if inst.transcription is not None
                     else IGNORE_TRANSCRIPTION if inst.ignore else "")
    _check_single_line(script)
    _check_single_line(transcription)
    if "," in script:
        raise AnnotationError("script labels must not contain commas")
    coords = ",".join(_format_number(v) for xy in inst.points for v in xy)
    return f"{coords},{script},{transcription}"


# ---- 14-vertex (CTW1500 style) ------------------------------------------

CTW_VERTICES = 14


def parse_ctw_line(line: str, flavor: str = "absolute",
                   where: str = "line") -> TextInstance:
    """28 coordinates (+ optional transcription).

    flavor "absolute": the 28 numbers are x,y pairs.  flavor "legacy":
    xmin,ymin,xmax,ymax then 28 offsets added to (xmin, ymin).
    """
    if flavor not in ("absolute", "legacy"):
        raise ValueError(f"unknown flavor {flavor!r}")
    parts = line.rstrip("\n").split(",")
    n_coords = 28 if flavor == "absolute" else 32
    if len(parts) < n_coords:
        raise AnnotationError(
            f"{where}: expected {n_coords} coordinates, got {len(parts)} fields")
    flat = _parse_coords(parts[:n_coords], where).reshape(-1)
    if flavor == "absolute":
        points = flat.reshape(CTW_VERTICES, 2)
    else:
        xmin, ymin = flat[0], flat[1]
        offsets = flat[4:].reshape(CTW_VERTICES, 2)
        points = offsets + np.array([xmin, ymin])
    transcription = ",".join(parts[n_coords:]) if len(parts) > n_coords else None
    ignore = transcription == IGNORE_TRANSCRIPTION
    return TextInstance(points=points, transcription=transcription,
                        ignore=ignore)


def serialize_ctw_line(inst: TextInstance, flavor: str = "absolute") -> str:
    if inst.points.shape[0] != CTW_VERTICES:
        raise AnnotationError(
            f"14-vertex format needs {CTW_VERTICES} vertices, "
            f"got {inst.points.shape[0]}")
    _check_single_line(inst.transcription)
    if flavor == "absolute":
        coords = [v for xy in inst.points for v in xy]
    elif flavor == "legacy":
        xmin, ymin = inst.points[:, 0].min(), inst.points[:, 1].min()
        xmax, ymax = inst.points[:, 0].max(), inst.points[:, 1].max()
        offsets = inst.points - np.array([xmin, ymin])
        coords = [xmin, ymin, xmax, ymax] + [v for xy in offsets for v in xy]
    else:
        raise ValueError(f"unknown flavor {flavor!r}")
    out = ",".join(_format_number(v) for v in coords)
    if inst.transcription is not None:
        out = f"{out},{inst.transcription}"
    elif inst.ignore:
        out = f"{out},{IGNORE_TRANSCRIPTION}"
    return out


# ---- whole files ---------------------------------------------------------

def _read_lines(path: str | Path) -> list[tuple[int, str]]:
    text = Path(path).read_text(encoding="utf-8-sig")
    return [(i, line) for i, line in enumerate(text.splitlines(), start=1)
            if line.strip()]


def parse_annotation_file(path: str | Path, fmt: str,
                          ctw_flavor: str = "absolute") -> list[TextInstance]:
    """fmt: one of mlt2019, ctw1500, synthetic."""
    if fmt not in ("mlt2019", "ctw1500", "synthetic"):
        raise AnnotationError(f"unknown annotation format {fmt!r}")
    out = []
    for line_no, line in _read_lines(path):
        where = f"{path}:{line_no}"
        if fmt == "mlt2019":
            out.append(parse_mlt_line(line, where))
        elif fmt == "ctw1500":
            out.append(parse_ctw_line(line, ctw_flavor, where))
        else:
            out.append(parse_polygon_line(line, where))
    return out


def write_annotation_file(path: str | Path, instances: list[TextInstance],
                          fmt: str, ctw_flavor: str = "absolute") -> None:
    if fmt == "mlt2019":
        lines = [serialize_mlt_line(i) for i in instances]
    elif fmt == "ctw1500":
        lines = [serialize_ctw_line(i, ctw_flavor) for i in instances]
    elif fmt == "synthetic":
        lines = [serialize_polygon_line(i) for i in instances]
    else:
        raise AnnotationError(f"unknown annotation format {fmt!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")
