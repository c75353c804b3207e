import random

import numpy as np
import pytest

from conftest import make_object, make_scene
from errors import ConfigError, SceneInfeasible
from shapeworld.constants import WITHHELD_COMBOS, WITHHELD_COUNTS
from shapeworld.worldgen import (
    SceneSpec, half_extent, luminance, mask_area, overlap_fraction, rasterize, sample_scene, to_bytes,
)


# ── luminance ──

def test_luminance_of_canonical_colors():
    assert luminance('yellow', 1.0) == pytest.approx(0.886)
    assert luminance('red', 1.0) == pytest.approx(0.299)


def test_luminance_grows_with_shade():
    assert luminance('red', 1.0) > luminance('red', 0.6)


# ── overlap ──

def test_overlap_of_disjoint_objects_is_zero():
    a = make_object(x=0.2, y=0.2, size=0.1)
    b = make_object(x=0.8, y=0.8, size=0.1)
    assert overlap_fraction(a, b) == 0.0


def test_overlap_of_identical_objects_is_one():
    a = make_object(shape='circle', x=0.5, y=0.5, size=0.2)
    assert overlap_fraction(a, a) == 1.0


def test_overlap_of_half_offset_squares():
    a = make_object(x=0.4, y=0.5, size=0.25)
    b = make_object(x=0.525, y=0.5, size=0.25)
    assert abs(overlap_fraction(a, b) - 0.5) <= 1.0 / 64
    assert overlap_fraction(a, b) == overlap_fraction(b, a)


def test_overlap_is_normalized_by_the_smaller_object():
    big = make_object(x=0.5, y=0.5, size=0.25)
    small = make_object(x=0.5, y=0.5, size=0.1, color='blue')
    assert overlap_fraction(big, small) == 1.0


# ── sampling ──

def test_single_count_set_gives_one_object():
    scene = sample_scene(SceneSpec(count_sets=(1,)), random.Random(3))
    assert len(scene) == 1


def test_sampled_scenes_respect_every_constraint():
    spec = SceneSpec()
    rng = random.Random(11)
    withheld = set(WITHHELD_COMBOS)
    for _ in range(200):
        scene = sample_scene(spec, rng)
        assert len(scene) not in WITHHELD_COUNTS
        assert len(scene) in spec.count_sets
        for obj in scene.objects:
            assert (obj.shape, obj.color) not in withheld
            assert 0.6 <= obj.shade <= 1.0
            assert spec.min_size <= obj.size[0] <= spec.max_size
            assert spec.min_size <= obj.size[1] <= spec.max_size
            ex, ey = half_extent(obj.size, obj.rotation)
            assert ex <= obj.x <= 1.0 - ex
            assert ey <= obj.y <= 1.0 - ey
        for i, a in enumerate(scene.objects):
            for b in scene.objects[i + 1:]:
                assert overlap_fraction(a, b) <= spec.max_overlap


def test_strict_overlap_bound_holds_for_every_pair():
    spec = SceneSpec(max_overlap=0.05, count_sets=(2, 3, 4, 6))
    rng = random.Random(5)
    for _ in range(50):
        scene = sample_scene(spec, rng)
        for i, a in enumerate(scene.objects):
            for b in scene.objects[i + 1:]:
                assert overlap_fraction(a, b) <= 0.05


def test_forced_combo_is_placed():
    spec = SceneSpec(count_sets=(3,), forced_combo=('square', 'red'))
    for seed in range(10):
        scene = sample_scene(spec, random.Random(seed))
        assert ('square', 'red') in [(o.shape, o.color) for o in scene.objects]


def test_infeasible_spec_raises():
    spec = SceneSpec(count_sets=(14,), max_overlap=0.0, min_size=0.5, max_size=0.5, placement_attempts=20)
    with pytest.raises(SceneInfeasible):
        sample_scene(spec, random.Random(0))


def test_empty_count_set_is_a_config_error():
    spec = SceneSpec(count_sets=(5,))
    with pytest.raises(ConfigError):
        sample_scene(spec, random.Random(0))


def test_sampled_objects_are_visible():
    rng = random.Random(2)
    for _ in range(20):
        for obj in sample_scene(SceneSpec(), rng).objects:
            assert mask_area(obj, 64) > 0


# ── rasterization ──

def test_empty_scene_is_black():
    image = rasterize(make_scene(), resolution=32)
    assert image.shape == (32, 32, 3)
    assert not image.any()


def test_red_square_pixels():
    scene = make_scene(make_object(x=0.5, y=0.5, size=0.25))
    image = rasterize(scene, resolution=64, supersample=2)
    assert tuple(image[32, 32]) == (1.0, 0.0, 0.0)
    assert tuple(image[28, 36]) == (1.0, 0.0, 0.0)
    assert tuple(image[2, 2]) == (0.0, 0.0, 0.0)
    assert tuple(image[60, 10]) == (0.0, 0.0, 0.0)


def test_later_objects_are_drawn_on_top():
    under = make_object(color='red', x=0.5, y=0.5, size=0.25)
    over = make_object(color='blue', x=0.5, y=0.5, size=0.1)
    image = rasterize(make_scene(under, over), resolution=64)
    assert tuple(image[32, 32]) == (0.0, 0.0, 1.0)


def test_rasterize_is_deterministic():
    scene = sample_scene(SceneSpec(), random.Random(9))
    first = to_bytes(rasterize(scene, 64, 2))
    second = to_bytes(rasterize(scene, 64, 2))
    assert first.dtype == np.uint8
    assert np.array_equal(first, second)


def test_rasterize_rejects_tiny_resolution():
    with pytest.raises(ConfigError):
        rasterize(make_scene(), resolution=8)
