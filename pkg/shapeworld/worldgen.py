"""
World Generation
Samples abstract scenes of coloured shapes under count, overlap and
withholding constraints and rasterizes them to RGB images.

Coordinates live in the unit square with y pointing down (screen
coordinates), so "above" means a smaller y.

Usage:
    import random
    from shapeworld.worldgen import SceneSpec, sample_scene, rasterize

    scene = sample_scene(SceneSpec(), random.Random(7), seed=7)
    image = rasterize(scene, resolution=64, supersample=2)    # 64×64×3 floats
"""

import math
import logging
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from matplotlib.path import Path as PolygonPath

from errors import ConfigError, SceneInfeasible
from shapeworld.constants import (
    SHAPES, COLORS, COLOR_RGB, LUMA_WEIGHTS, MIN_SHADE, MAX_SHADE, AREA_FACTORS,
    REGULAR_SHAPES, MIN_ASPECT_GAP, WITHHELD_COMBOS, WITHHELD_COUNTS, DEFAULT_COUNT_SETS,
)

logger = logging.getLogger(__name__)

# Masks for overlap measurement are always taken at this resolution.
REFERENCE_RESOLUTION = 256

# ── Polygon outlines in the local [-1, 1]² frame ──
_TRIANGLE = PolygonPath([(0.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (0.0, -1.0)], closed=True)
_PENTAGON = PolygonPath(
    [(math.cos(-math.pi / 2 + 2 * math.pi * k / 5), math.sin(-math.pi / 2 + 2 * math.pi * k / 5))
     for k in range(5)] + [(0.0, -1.0)],
    closed=True,
)


# ═══════════════════════════════════════════════════════════════
# Domain types
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class WorldObject:
    shape: str
    color: str
    shade: float
    center: tuple
    size: tuple
    rotation: float = 0.0

    @property
    def x(self):
        return self.center[0]

    @property
    def y(self):
        return self.center[1]

    @property
    def area(self):
        return AREA_FACTORS[self.shape] * self.size[0] * self.size[1]

    @property
    def luminance(self):
        return luminance(self.color, self.shade)

    @property
    def distance(self):
        """Euclidean distance of the center from the canvas center."""
        return math.hypot(self.center[0] - 0.5, self.center[1] - 0.5)

    def to_dict(self):
        return {
            'shape': self.shape,
            'color': self.color,
            'shade': self.shade,
            'center': [self.center[0], self.center[1]],
            'size': [self.size[0], self.size[1]],
            'rotation': self.rotation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            shape=d['shape'],
            color=d['color'],
            shade=d['shade'],
            center=(d['center'][0], d['center'][1]),
            size=(d['size'][0], d['size'][1]),
            rotation=d.get('rotation', 0.0),
        )


@dataclass(frozen=True)
class Scene:
    """Ordered objects on a black background. Later objects are drawn on top."""
    objects: tuple = ()
    seed: int = 0

    def __len__(self):
        return len(self.objects)

    def to_dict(self):
        return {'seed': self.seed, 'objects': [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d):
        return cls(objects=tuple(WorldObject.from_dict(o) for o in d['objects']),
                   seed=d.get('seed', 0))


@dataclass(frozen=True)
class SceneSpec:
    count_sets: tuple = DEFAULT_COUNT_SETS
    max_overlap: float = 0.25
    withheld_combos: tuple = WITHHELD_COMBOS
    withheld_counts: tuple = WITHHELD_COUNTS
    allow_withheld_counts: bool = False
    allow_withheld_combos: bool = False
    forced_combo: tuple = None
    min_size: float = 0.1
    max_size: float = 0.25
    placement_attempts: int = 1000

    def allowed_counts(self):
        counts = set(self.count_sets)
        if not self.allow_withheld_counts:
            counts -= set(self.withheld_counts)
        return tuple(sorted(counts))

    def with_counts(self, counts, allow_withheld=False):
        return replace(self, count_sets=tuple(counts), allow_withheld_counts=allow_withheld)


# ═══════════════════════════════════════════════════════════════
# Geometry
# ═══════════════════════════════════════════════════════════════

def luminance(color, shade):
    """Rec.601 luma of the canonical colour, scaled by shade."""
    r, g, b = COLOR_RGB[color]
    wr, wg, wb = LUMA_WEIGHTS
    return (wr * r + wg * g + wb * b) * shade


def half_extent(size, rotation):
    """Half width/height of the axis-aligned box around the rotated object frame."""
    theta = 2.0 * math.pi * rotation
    hw, hh = size[0] / 2.0, size[1] / 2.0
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    return hw * c + hh * s, hw * s + hh * c


def contains(obj, xs, ys):
    """Point-in-shape test for arrays of canvas points."""
    theta = 2.0 * math.pi * obj.rotation
    c, s = math.cos(theta), math.sin(theta)
    dx = xs - obj.center[0]
    dy = ys - obj.center[1]
    u = (c * dx + s * dy) / (obj.size[0] / 2.0)
    v = (-s * dx + c * dy) / (obj.size[1] / 2.0)

    kind = obj.shape
    if kind in ('square', 'rectangle'):
        return (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    if kind in ('circle', 'ellipse'):
        return u * u + v * v <= 1.0
    if kind == 'cross':
        au, av = np.abs(u), np.abs(v)
        third = 1.0 / 3.0
        return ((au <= 1.0) & (av <= third)) | ((au <= third) & (av <= 1.0))
    if kind in ('triangle', 'pentagon'):
        path = _TRIANGLE if kind == 'triangle' else _PENTAGON
        points = np.column_stack([u.ravel(), v.ravel()])
        return path.contains_points(points).reshape(u.shape)
    raise ConfigError(f"Unknown shape kind: {kind}")


def _pixel_window(obj, resolution):
    """Inclusive pixel index range [p0, p1] per axis covering the object's box."""
    ex, ey = half_extent(obj.size, obj.rotation)
    x0 = max(0, int(math.floor((obj.center[0] - ex) * resolution)))
    x1 = min(resolution - 1, int(math.floor((obj.center[0] + ex) * resolution)))
    y0 = max(0, int(math.floor((obj.center[1] - ey) * resolution)))
    y1 = min(resolution - 1, int(math.floor((obj.center[1] + ey) * resolution)))
    return x0, x1, y0, y1


def _window_mask(obj, x0, x1, y0, y1, resolution):
    xs = (np.arange(x0, x1 + 1) + 0.5) / resolution
    ys = (np.arange(y0, y1 + 1) + 0.5) / resolution
    gx, gy = np.meshgrid(xs, ys)
    return contains(obj, gx, gy)


@lru_cache(maxsize=8192)
def mask_area(obj, resolution=REFERENCE_RESOLUTION):
    """Pixel count of the object's mask at the given resolution."""
    x0, x1, y0, y1 = _pixel_window(obj, resolution)
    if x1 < x0 or y1 < y0:
        return 0
    return int(_window_mask(obj, x0, x1, y0, y1, resolution).sum())


def overlap_fraction(a, b):
    """
    |mask(a) ∩ mask(b)| / min(|mask(a)|, |mask(b)|) with masks rasterized at
    REFERENCE_RESOLUTION. Symmetric, in [0, 1].
    """
    ax0, ax1, ay0, ay1 = _pixel_window(a, REFERENCE_RESOLUTION)
    bx0, bx1, by0, by1 = _pixel_window(b, REFERENCE_RESOLUTION)
    x0, x1 = max(ax0, bx0), min(ax1, bx1)
    y0, y1 = max(ay0, by0), min(ay1, by1)
    if x1 < x0 or y1 < y0:
        return 0.0

    smaller = min(mask_area(a), mask_area(b))
    if smaller == 0:
        return 0.0
    both = (_window_mask(a, x0, x1, y0, y1, REFERENCE_RESOLUTION)
            & _window_mask(b, x0, x1, y0, y1, REFERENCE_RESOLUTION))
    return min(1.0, int(both.sum()) / smaller)


# ═══════════════════════════════════════════════════════════════
# Sampling
# ═══════════════════════════════════════════════════════════════

def _sample_attributes(spec, rng, forced):
    if forced is not None:
        return forced[0], forced[1]
    withheld = set(tuple(c) for c in spec.withheld_combos)
    while True:
        shape = rng.choice(SHAPES)
        color = rng.choice(COLORS)
        if spec.allow_withheld_combos or (shape, color) not in withheld:
            return shape, color


def _sample_size(spec, rng, shape):
    if shape in REGULAR_SHAPES:
        side = rng.uniform(spec.min_size, spec.max_size)
        return side, side
    # rectangles and ellipses must not pass for squares and circles
    for _ in range(1000):
        w = rng.uniform(spec.min_size, spec.max_size)
        h = rng.uniform(spec.min_size, spec.max_size)
        if max(w, h) / min(w, h) >= 1.0 + MIN_ASPECT_GAP:
            return w, h
    return spec.max_size, spec.min_size


def sample_object(spec, rng, forced=None):
    """Draw one object with random attributes and a pose fully inside the canvas."""
    shape, color = _sample_attributes(spec, rng, forced)
    shade = rng.uniform(MIN_SHADE, MAX_SHADE)
    size = _sample_size(spec, rng, shape)
    rotation = 0.0 if shape == 'circle' else rng.random()
    ex, ey = half_extent(size, rotation)
    center = (rng.uniform(ex, 1.0 - ex), rng.uniform(ey, 1.0 - ey))
    return WorldObject(shape=shape, color=color, shade=shade, center=center,
                       size=size, rotation=rotation)


def sample_scene(spec, rng, seed=0):
    """
    Sample a scene by rejection placement: each object is redrawn until it
    overlaps every placed object by at most spec.max_overlap.
    Raises SceneInfeasible when an object exhausts its attempt budget.
    """
    counts = spec.allowed_counts()
    if not counts:
        raise ConfigError(f"Scene spec has no usable object counts: {spec.count_sets}")
    if spec.max_size > 1.0 or spec.min_size <= 0 or spec.min_size > spec.max_size:
        raise ConfigError(f"Invalid size range [{spec.min_size}, {spec.max_size}]")

    n = rng.choice(counts)
    forced_slot = rng.randrange(n) if spec.forced_combo is not None else None

    objects = []
    for k in range(n):
        forced = spec.forced_combo if k == forced_slot else None
        for _ in range(spec.placement_attempts):
            candidate = sample_object(spec, rng, forced)
            if all(overlap_fraction(candidate, other) <= spec.max_overlap for other in objects):
                objects.append(candidate)
                break
        else:
            raise SceneInfeasible(
                f"could not place object {k + 1} of {n} within {spec.placement_attempts} attempts "
                f"(max_overlap={spec.max_overlap})"
            )
    return Scene(objects=tuple(objects), seed=seed)


# ═══════════════════════════════════════════════════════════════
# Rasterization
# ═══════════════════════════════════════════════════════════════

def rasterize(scene, resolution=64, supersample=2):
    """
    Render a scene to an H×W×3 float image in [0, 1]. Each pixel averages
    supersample² point-in-shape tests; objects are composited in list order.
    """
    if resolution < 16:
        raise ConfigError(f"resolution must be >= 16, got {resolution}")
    if supersample < 1:
        raise ConfigError(f"supersample must be >= 1, got {supersample}")

    image = np.zeros((resolution, resolution, 3), dtype=np.float64)
    fine = resolution * supersample
    for obj in scene.objects:
        x0, x1, y0, y1 = _pixel_window(obj, resolution)
        if x1 < x0 or y1 < y0:
            continue
        inside = _window_mask(obj, x0 * supersample, (x1 + 1) * supersample - 1,
                              y0 * supersample, (y1 + 1) * supersample - 1, fine)
        rows, cols = y1 - y0 + 1, x1 - x0 + 1
        coverage = inside.reshape(rows, supersample, cols, supersample).mean(axis=(1, 3))
        coverage = coverage[:, :, None]
        rgb = np.asarray(COLOR_RGB[obj.color], dtype=np.float64) * obj.shade
        region = image[y0:y1 + 1, x0:x1 + 1]
        image[y0:y1 + 1, x0:x1 + 1] = region * (1.0 - coverage) + coverage * rgb
    return image


def to_bytes(image):
    """Quantize a [0, 1] float image to u8."""
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def scene_combos(scene):
    return [(o.shape, o.color) for o in scene.objects]
