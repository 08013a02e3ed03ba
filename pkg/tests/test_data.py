import json

import numpy as np
import pytest

from vltextdet.data.annotations import (
    AnnotationError,
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
from vltextdet.data.datasets import (
    DatasetError,
    DatasetManifest,
    Sample,
    clip_instances,
)
from vltextdet.data.rasterize import fill_polygon_mask, polygon_area, rasterize


# --- quad-per-line records ------------------------------------------------

def test_reference_quad_line():
    inst = parse_mlt_line("0,0,10,0,10,5,0,5,Latin,hello")
    assert np.array_equal(inst.points,
                          [[0, 0], [10, 0], [10, 5], [0, 5]])
    assert inst.script == "Latin"
    assert inst.transcription == "hello"
    assert not inst.ignore


def test_unreadable_marker_sets_ignore():
    inst = parse_mlt_line("0,0,10,0,10,5,0,5,Arabic,###")
    assert inst.ignore
    assert inst.transcription == "###"


def test_commas_in_transcription_survive():
    inst = parse_mlt_line("0,0,10,0,10,5,0,5,Latin,a,b")
    assert inst.transcription == "a,b"
    line = serialize_mlt_line(inst)
    again = parse_mlt_line(line)
    assert again.transcription == "a,b"
    assert np.array_equal(again.points, inst.points)


@pytest.mark.parametrize("line", [
    "0,0,10,0,10,5,0,5,Latin",           # nine fields
    "0,0,10,x,10,5,0,5,Latin,hi",        # non-numeric coordinate
    "",
])
def test_bad_quad_lines_report_location(line):
    with pytest.raises(AnnotationError, match="gt.txt:3"):
        parse_mlt_line(line, where="gt.txt:3")


def test_quad_serializer_requires_four_vertices():
    tri = TextInstance(points=np.array([[0, 0], [4, 0], [2, 3]], dtype=float),
                       script="Latin", transcription="t", ignore=False)
    with pytest.raises(AnnotationError):
        serialize_mlt_line(tri)


def test_float_coordinates_roundtrip_exactly():
    inst = parse_mlt_line("0.5,0,10.25,0,10.25,5.125,0.5,5.125,Latin,x")
    line = serialize_mlt_line(inst)
    assert np.array_equal(parse_mlt_line(line).points, inst.points)
    assert ".5" in line and "5.125" in line


def test_fuzzed_quad_roundtrips():
    rng = np.random.default_rng(23)
    scripts = ["Latin", "Arabic", "Bangla", "Chinese", "Mixed"]
    texts = ["hi", "###", "a,b,c", "café", "12 34", "!?"]
    for _ in range(100):
        pts = np.round(rng.random((4, 2)) * 500, 2)
        inst = TextInstance(points=pts,
                            script=scripts[rng.integers(len(scripts))],
                            transcription=texts[rng.integers(len(texts))],
                            ignore=False)
        inst = TextInstance(points=pts, script=inst.script,
                            transcription=inst.transcription,
                            ignore=inst.transcription == "###")
        back = parse_mlt_line(serialize_mlt_line(inst))
        assert np.array_equal(back.points, inst.points)
        assert back.script == inst.script
        assert back.transcription == inst.transcription
        assert back.ignore == inst.ignore


# --- 14-vertex records ----------------------------------------------------

def rect14(x0, y0, x1, y1):
    """Axis-aligned rectangle traced with 7 points per long edge."""
    top = [(x0 + (x1 - x0) * i / 6, y0) for i in range(7)]
    bot = [(x0 + (x1 - x0) * i / 6, y1) for i in reversed(range(7))]
    return np.array(top + bot, dtype=float)


def test_curved_record_has_fourteen_vertices():
    pts = rect14(0, 0, 60, 12)
    line = serialize_ctw_line(TextInstance(points=pts, script="Latin",
                                           transcription="word",
                                           ignore=False))
    inst = parse_ctw_line(line)
    assert inst.points.shape == (14, 2)
    assert abs(polygon_area(inst.points) - 60 * 12) <= 1e-9


def test_ctw_absolute_roundtrip_with_and_without_text():
    pts = rect14(5, 5, 47, 19)
    for text in ("hello", None):
        inst = TextInstance(points=pts, script="Latin",
                            transcription=text, ignore=False)
        back = parse_ctw_line(serialize_ctw_line(inst))
        assert np.array_equal(back.points, pts)
        assert back.transcription == text


def test_ctw_legacy_flavor_offsets():
    pts = rect14(10, 20, 70, 34)
    inst = TextInstance(points=pts, script="Latin", transcription="x",
                        ignore=False)
    line = serialize_ctw_line(inst, flavor="legacy")
    fields = line.split(",")
    # bbox first: xmin, ymin, xmax, ymax, then 28 offsets
    assert [float(f) for f in fields[:4]] == [10, 20, 70, 34]
    back = parse_ctw_line(line, flavor="legacy")
    assert np.array_equal(back.points, pts)


def test_fuzzed_ctw_roundtrips_both_flavors():
    rng = np.random.default_rng(29)
    for _ in range(100):
        x0, y0 = rng.integers(0, 200, 2)
        wdt, hgt = rng.integers(10, 120, 2)
        pts = rect14(float(x0), float(y0), float(x0 + wdt), float(y0 + hgt))
        jitter = rng.integers(0, 4, size=(14, 2)).astype(float)
        pts = pts + jitter
        text = ["word", "###", None][rng.integers(3)]
        inst = TextInstance(points=pts, script="Latin", transcription=text,
                            ignore=text == "###")
        for flavor in ("absolute", "legacy"):
            back = parse_ctw_line(serialize_ctw_line(inst, flavor=flavor),
                                  flavor=flavor)
            assert np.array_equal(back.points, pts)
            assert back.transcription == text
            assert back.ignore == inst.ignore


def test_ctw_wrong_vertex_count_rejected():
    with pytest.raises(AnnotationError):
        parse_ctw_line("0,0,1,0,1,1,0,1")
    with pytest.raises(AnnotationError):
        serialize_ctw_line(TextInstance(
            points=np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float),
            script="Latin", transcription=None, ignore=False))


# --- free-polygon records -------------------------------------------------

def test_polygon_line_roundtrip_any_vertex_count():
    pts = np.array([[0, 0], [10, 0], [12, 4], [6, 8], [0, 4]], dtype=float)
    inst = TextInstance(points=pts, script="Latin", transcription="go,stop",
                        ignore=False)
    back = parse_polygon_line(serialize_polygon_line(inst))
    assert np.array_equal(back.points, pts)
    assert back.transcription == "go,stop"


def test_polygon_line_distinguishes_script_from_coords():
    inst = parse_polygon_line("0,0,8,0,8,4,0,4,Latin,hi")
    assert inst.points.shape == (4, 2)
    assert inst.script == "Latin"


# --- annotation files -----------------------------------------------------

def test_annotation_file_roundtrip(tmp_path):
    instances = [
        parse_mlt_line("0,0,10,0,10,5,0,5,Latin,hello"),
        parse_mlt_line("20,0,30,0,30,5,20,5,Arabic,###"),
    ]
    path = tmp_path / "gt_img_1.txt"
    write_annotation_file(path, instances, fmt="mlt2019")
    back = parse_annotation_file(path, fmt="mlt2019")
    assert len(back) == 2
    assert back[1].ignore
    for a, b in zip(instances, back):
        assert np.array_equal(a.points, b.points)


def test_annotation_file_skips_blank_lines_and_bom(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_bytes("﻿0,0,10,0,10,5,0,5,Latin,hi\n\n".encode("utf-8"))
    back = parse_annotation_file(path, fmt="mlt2019")
    assert len(back) == 1


def test_annotation_file_errors_carry_path_and_line(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_text("0,0,10,0,10,5,0,5,Latin,ok\nbroken line\n")
    with pytest.raises(AnnotationError, match=r"gt\.txt:2"):
        parse_annotation_file(path, fmt="mlt2019")


def test_unknown_format_rejected(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_text("")
    with pytest.raises(AnnotationError):
        parse_annotation_file(path, fmt="cocotext")


# --- rasterization --------------------------------------------------------

def quad(x0, y0, x1, y1):
    return TextInstance(points=np.array(
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float),
        script="Latin", transcription="t", ignore=False)


def test_shoelace_area():
    assert polygon_area(np.array([[0, 0], [4, 0], [4, 3], [0, 3]],
                                 dtype=float)) == pytest.approx(12.0)
    tri = np.array([[0, 0], [6, 0], [0, 6]], dtype=float)
    assert polygon_area(tri) == pytest.approx(18.0)


def test_integer_rectangle_fills_exact_pixel_count():
    gt = rasterize([quad(3, 2, 13, 8)], 16, 20)
    assert int(gt.positive.sum()) == 10 * 6
    assert not gt.ignore.any()
    assert gt.positive[4, 5] and not gt.positive[1, 1]


def test_rectangle_count_within_perimeter_band():
    inst = quad(2.3, 1.7, 14.6, 9.2)
    gt = rasterize([inst], 16, 20)
    area = polygon_area(inst.points)
    perimeter = 2 * ((14.6 - 2.3) + (9.2 - 1.7))
    assert abs(int(gt.positive.sum()) - area) <= perimeter


def test_only_unreadable_instances_rasterize_to_ignore():
    inst = quad(2, 2, 10, 8)
    ign = TextInstance(points=inst.points, script="Arabic",
                       transcription="###", ignore=True)
    gt = rasterize([ign], 12, 12)
    assert not gt.positive.any()
    assert gt.ignore.any()


def test_positive_wins_over_ignore_on_overlap():
    readable = quad(0, 0, 8, 8)
    unreadable = TextInstance(points=quad(4, 4, 12, 12).points,
                              script="Latin", transcription="###",
                              ignore=True)
    gt = rasterize([readable, unreadable], 16, 16)
    assert gt.positive[6, 6]
    assert not gt.ignore[6, 6]
    assert gt.ignore[10, 10]
    assert not (gt.positive & gt.ignore).any()


def crossing_number_inside(poly, x, y):
    """Classic ray-cast point-in-polygon, written edge by edge."""
    inside = False
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            t = (y - y0) / (y1 - y0)
            if x < x0 + t * (x1 - x0):
                inside = not inside
    return inside


def test_fill_matches_ray_cast_oracle_on_random_polygons():
    rng = np.random.default_rng(31)
    for _ in range(5):
        k = int(rng.integers(3, 8))
        pts = rng.random((k, 2)) * np.array([18, 14])
        mask = fill_polygon_mask(pts, 14, 18)
        for r in range(14):
            for c in range(18):
                expected = crossing_number_inside(pts, c + 0.5, r + 0.5)
                assert mask[r, c] == expected, (pts, r, c)


# --- samples and manifests -------------------------------------------------

def make_sample(idx="s0"):
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    return Sample(image=img, instances=[quad(4, 4, 20, 12)], id=idx)


def test_sample_properties_and_mask():
    s = make_sample()
    assert (s.height, s.width) == (32, 32)
    gt = s.ground_truth_mask()
    assert gt.positive.shape == (32, 32)
    assert gt.positive.any()


def test_sample_validation():
    with pytest.raises(DatasetError):
        Sample(image=np.zeros((32, 32), dtype=np.uint8), instances=[], id="x")


def test_clip_instances_limits_coordinates():
    inst = quad(-5, -5, 40, 40)
    clipped = clip_instances([inst], 32, 32)
    assert clipped[0].points.min() >= 0
    assert clipped[0].points[:, 0].max() <= 32
    assert clipped[0].points[:, 1].max() <= 32


def test_manifest_roundtrip_and_env_root(tmp_path, monkeypatch):
    import cv2

    root = tmp_path / "ds"
    (root / "images").mkdir(parents=True)
    (root / "gt").mkdir()
    img = np.full((24, 24, 3), 128, dtype=np.uint8)
    cv2.imwrite(str(root / "images" / "a.png"), img)
    write_annotation_file(root / "gt" / "a.txt",
                          [quad(2, 2, 12, 8)], fmt="mlt2019")
    manifest = DatasetManifest(
        root=root, format="mlt2019", split="train",
        entries=[{"id": "a", "image": "images/a.png", "gt": "gt/a.txt"}])
    path = root / "manifest.json"
    manifest.save(path)

    loaded = DatasetManifest.load(path)
    loaded.verify()
    sample = loaded.load_sample(loaded.entries[0])
    assert sample.id == "a"
    assert sample.image.shape == (24, 24, 3)
    assert len(sample.instances) == 1
    assert loaded.gt_by_id()["a"][0].script == "Latin"

    moved = tmp_path / "elsewhere"
    moved.mkdir()
    (moved / "manifest.json").write_text(path.read_text())
    monkeypatch.setenv("VLTEXTDET_DATA_ROOT", str(root))
    via_env = DatasetManifest.load(moved / "manifest.json")
    assert via_env.load_sample(via_env.entries[0]).image.shape == (24, 24, 3)


def test_manifest_verify_lists_missing_files(tmp_path):
    manifest = DatasetManifest(
        root=tmp_path, format="mlt2019", split="train",
        entries=[{"id": "gone", "image": "images/gone.png",
                  "gt": "gt/gone.txt"}])
    with pytest.raises(DatasetError, match="gone"):
        manifest.verify()


def test_manifest_rejects_unknown_format(tmp_path):
    with pytest.raises(DatasetError):
        DatasetManifest(root=tmp_path, format="pascal", split="train",
                        entries=[])


def test_manifest_load_rejects_bad_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(DatasetError):
        DatasetManifest.load(path)
    path.write_text(json.dumps({"format": "mlt2019"}))
    with pytest.raises(DatasetError):
        DatasetManifest.load(path)
