import numpy as np
import pytest

from vltextdet.data.annotations import TextInstance
from vltextdet.data.augment import (
    augment,
    clip_polygon_to_rect,
    crop_sample,
    hflip_sample,
    resize_sample,
)
from vltextdet.data.datasets import Sample
from vltextdet.data.rasterize import polygon_area
from vltextdet.data.synth import SynthSpec, synthesize_sample


def quad_instance(x0, y0, x1, y1, ignore=False):
    return TextInstance(points=np.array(
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float),
        script="Latin", transcription="###" if ignore else "t", ignore=ignore)


def grid_sample(size=64):
    rng = np.random.default_rng(3)
    image = rng.integers(0, 255, size=(size, size, 3), dtype=np.uint8)
    return Sample(image=image,
                  instances=[quad_instance(8, 8, 28, 20),
                             quad_instance(40, 36, 60, 52)], id="g")


# --- polygon clipping -----------------------------------------------------

def test_clip_keeps_interior_polygons_unchanged():
    pts = np.array([[2, 2], [8, 2], [8, 6], [2, 6]], dtype=float)
    out = clip_polygon_to_rect(pts, 10, 10)
    assert polygon_area(out) == pytest.approx(polygon_area(pts))


def test_clip_discards_exterior_polygons():
    pts = np.array([[20, 20], [28, 20], [28, 26], [20, 26]], dtype=float)
    out = clip_polygon_to_rect(pts, 10, 10)
    assert out.shape[0] == 0


def test_clip_halves_a_straddling_square():
    # Square spanning x in [0, 4] clipped at x <= 2 keeps half its area.
    pts = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float)
    out = clip_polygon_to_rect(pts, 2, 4)
    assert abs(polygon_area(out)) == pytest.approx(8.0)
    assert out[:, 0].max() <= 2


# --- horizontal flip ------------------------------------------------------

def test_flip_is_an_involution():
    s = grid_sample()
    back = hflip_sample(hflip_sample(s))
    assert np.array_equal(back.image, s.image)
    for a, b in zip(back.instances, s.instances):
        assert np.allclose(a.points, b.points)


def test_flip_mirrors_mask_and_polygons_consistently():
    s = grid_sample()
    flipped = hflip_sample(s)
    assert np.array_equal(flipped.image, s.image[:, ::-1])
    mask = s.ground_truth_mask().positive
    flipped_mask = flipped.ground_truth_mask().positive
    assert np.array_equal(flipped_mask, mask[:, ::-1])


def test_flip_preserves_labels():
    s = Sample(image=np.zeros((32, 32, 3), dtype=np.uint8),
               instances=[quad_instance(2, 2, 10, 8, ignore=True)], id="x")
    f = hflip_sample(s)
    assert f.instances[0].ignore
    assert f.instances[0].transcription == "###"


# --- cropping -------------------------------------------------------------

def test_crop_keeps_fully_inside_instances():
    s = grid_sample()
    c = crop_sample(s, 0, 0, 36, 28)
    assert c.image.shape == (28, 36, 3)
    assert len(c.instances) == 1
    assert np.allclose(c.instances[0].points,
                       s.instances[0].points)


def test_crop_drops_outside_instances():
    s = grid_sample()
    c = crop_sample(s, 0, 0, 8, 8)       # misses both boxes
    assert c.instances == []


def test_crop_respects_the_keep_area_rule():
    s = Sample(image=np.zeros((40, 40, 3), dtype=np.uint8),
               instances=[quad_instance(0, 0, 20, 10)], id="x")
    # Keeps 40% of the area: stays.
    kept = crop_sample(s, 0, 0, 8, 40)
    assert len(kept.instances) == 1
    # Keeps 20% of the area: dropped at the 30% default.
    dropped = crop_sample(s, 0, 0, 4, 40)
    assert dropped.instances == []


def test_integer_crop_matches_mask_crop_exactly():
    # Window fully contains the first box and fully excludes the second, so
    # no instance is partially clipped and rasterizing the cropped polygons
    # must equal cropping the rasterized mask.
    s = grid_sample()
    c = crop_sample(s, 4, 6, 30, 20)
    assert len(c.instances) == 1
    full = s.ground_truth_mask().positive
    expected = full[6:26, 4:34]
    assert np.array_equal(c.ground_truth_mask().positive, expected)


# --- resizing -------------------------------------------------------------

def test_resize_scales_image_and_coordinates():
    s = grid_sample(64)
    r = resize_sample(s, 128)
    assert r.image.shape == (128, 128, 3)
    assert np.allclose(r.instances[0].points, s.instances[0].points * 2)


def test_resize_handles_non_square_inputs():
    img = np.zeros((32, 64, 3), dtype=np.uint8)
    s = Sample(image=img, instances=[quad_instance(0, 0, 64, 32)], id="x")
    r = resize_sample(s, 48)
    assert r.image.shape == (48, 48, 3)
    assert r.instances[0].points[:, 0].max() == pytest.approx(48)
    assert r.instances[0].points[:, 1].max() == pytest.approx(48)


# --- the full pipeline ----------------------------------------------------

def test_augment_always_emits_the_training_size():
    sample = synthesize_sample(3, SynthSpec(image_size=128))
    for seed in range(6):
        out = augment(sample, seed=seed)
        assert out.image.shape == (512, 512, 3)
        out_small = augment(sample, seed=seed, out_size=96)
        assert out_small.image.shape == (96, 96, 3)


def test_augment_is_deterministic_per_seed():
    sample = synthesize_sample(4, SynthSpec(image_size=128))
    a = augment(sample, seed=12, out_size=128)
    b = augment(sample, seed=12, out_size=128)
    assert np.array_equal(a.image, b.image)
    for x, y in zip(a.instances, b.instances):
        assert np.allclose(x.points, y.points)
    assert any(not np.array_equal(a.image, augment(sample, seed=s,
                                                   out_size=128).image)
               for s in range(5))


def test_augment_keeps_at_least_one_readable_instance():
    sample = synthesize_sample(8, SynthSpec(image_size=128))
    assert any(not i.ignore for i in sample.instances)
    for seed in range(10):
        out = augment(sample, seed=seed, out_size=128)
        assert any(not i.ignore for i in out.instances)


def test_augment_without_instances_still_works():
    empty = Sample(image=np.zeros((64, 64, 3), dtype=np.uint8),
                   instances=[], id="e")
    out = augment(empty, seed=0, out_size=96)
    assert out.image.shape == (96, 96, 3)
    assert out.instances == []


def test_augment_coordinates_stay_in_bounds():
    sample = synthesize_sample(9, SynthSpec(image_size=128))
    for seed in range(8):
        out = augment(sample, seed=seed, out_size=128)
        for inst in out.instances:
            assert inst.points[:, 0].min() >= -1e-6
            assert inst.points[:, 0].max() <= 128 + 1e-6
            assert inst.points[:, 1].min() >= -1e-6
            assert inst.points[:, 1].max() <= 128 + 1e-6
