"""
Shared Constants & Helpers
Closed attribute enumerations, canonical colors, withheld features and the
caption-family table used by world generation, semantics and datasets.
"""

import math
from fractions import Fraction

# ── Shapes ──
SHAPES = ('square', 'rectangle', 'triangle', 'pentagon', 'cross', 'circle', 'ellipse')

PLURALS = {
    'square': 'squares',
    'rectangle': 'rectangles',
    'triangle': 'triangles',
    'pentagon': 'pentagons',
    'cross': 'crosses',
    'circle': 'circles',
    'ellipse': 'ellipses',
    'shape': 'shapes',
}

# Kinds drawn with equal width and height.
REGULAR_SHAPES = frozenset({'square', 'triangle', 'pentagon', 'cross', 'circle'})

# Kinds whose width/height ratio must stay away from 1.
ELONGATED_SHAPES = frozenset({'rectangle', 'ellipse'})
MIN_ASPECT_GAP = 0.25

# Area of each kind inside its local [-1, 1]² frame, divided by 4 (the frame's area).
# Multiply by w·h to get the canvas area.
AREA_FACTORS = {
    'square': 1.0,
    'rectangle': 1.0,
    'triangle': 0.5,
    'pentagon': 2.5 * math.sin(2 * math.pi / 5) / 4.0,
    'cross': 5.0 / 9.0,
    'circle': math.pi / 4.0,
    'ellipse': math.pi / 4.0,
}

# ── Colors (canonical RGB) ──
COLORS = ('red', 'green', 'blue', 'yellow', 'magenta', 'cyan')

COLOR_RGB = {
    'red':     (1.0, 0.0, 0.0),
    'green':   (0.0, 1.0, 0.0),
    'blue':    (0.0, 0.0, 1.0),
    'yellow':  (1.0, 1.0, 0.0),
    'magenta': (1.0, 0.0, 1.0),
    'cyan':    (0.0, 1.0, 1.0),
}

# Rec.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

MIN_SHADE = 0.6
MAX_SHADE = 1.0

# ── Withheld features (test split only) ──
WITHHELD_COUNTS = (5, 10, 15)

WITHHELD_COMBOS = (
    ('square', 'red'),
    ('triangle', 'green'),
    ('circle', 'blue'),
    ('rectangle', 'yellow'),
    ('cross', 'magenta'),
    ('ellipse', 'cyan'),
)

DEFAULT_COUNT_SETS = (1, 2, 3, 4, 6, 7, 8, 9, 11, 12, 13, 14)

# ── Caption families ──
FAMILIES = (
    'existential',
    'single-shape',
    'logical',
    'numbers',
    'quantifiers',
    'relational',
    'simple-spatial',
    'relational-negation',
    'implicit-relational',
    'superlatives',
)

# Families whose truth depends on comparing objects geometrically.
COMPARATIVE_FAMILIES = frozenset({
    'relational', 'simple-spatial', 'relational-negation', 'implicit-relational', 'superlatives',
})

# Object counts each family's scenes may use (None = the split's count sets).
FAMILY_COUNTS = {
    'existential': None,
    'single-shape': (1,),
    'logical': None,
    'numbers': None,
    'quantifiers': None,
    'relational': 'at-least-2',
    'simple-spatial': (2,),
    'relational-negation': 'at-least-2',
    'implicit-relational': 'at-least-2',
    'superlatives': 'at-least-2',
}

# ── Comparators ──
COMPARATORS = ('less-than', 'more-than', 'at-most', 'at-least', 'exactly', 'not-exactly')

COMPLEMENT = {
    'less-than': 'at-least',
    'at-least': 'less-than',
    'more-than': 'at-most',
    'at-most': 'more-than',
    'exactly': 'not-exactly',
    'not-exactly': 'exactly',
}

NUMBER_WORDS = ('zero', 'one', 'two', 'three', 'four', 'five')
MAX_CAPTION_COUNT = 5

FRACTIONS = (
    Fraction(0), Fraction(1, 4), Fraction(1, 3), Fraction(1, 2),
    Fraction(2, 3), Fraction(3, 4), Fraction(1),
)

# ── Relations & selectors ──
SPATIAL_RELATIONS = ('left', 'right', 'above', 'below')

RELATIONS = SPATIAL_RELATIONS + (
    'closer', 'farther', 'darker', 'lighter', 'smaller', 'bigger',
    'same-shape', 'same-color', 'different-shape', 'different-color',
)

SELECTORS = ('left', 'right', 'upper', 'lower', 'smaller', 'bigger',
             'darker', 'lighter', 'closer', 'farther')

SUPERLATIVES = {
    'left': 'leftmost',
    'right': 'rightmost',
    'upper': 'uppermost',
    'lower': 'lowermost',
    'smaller': 'smallest',
    'bigger': 'biggest',
    'darker': 'darkest',
    'lighter': 'lightest',
    'closer': 'closest',
    'farther': 'farthest',
}

# selector → (object attribute, direction). Direction -1 picks the minimum.
SELECTOR_AXES = {
    'left': ('x', -1),
    'right': ('x', 1),
    'upper': ('y', -1),
    'lower': ('y', 1),
    'smaller': ('area', -1),
    'bigger': ('area', 1),
    'darker': ('luminance', -1),
    'lighter': ('luminance', 1),
    'closer': ('distance', -1),
    'farther': ('distance', 1),
}

# comparative relation → (object attribute, direction): rel(a, b) holds when a
# lies in that direction from b by more than the margin.
RELATION_AXES = {
    'left': ('x', -1),
    'right': ('x', 1),
    'above': ('y', -1),
    'below': ('y', 1),
    'closer': ('distance', -1),
    'farther': ('distance', 1),
    'darker': ('luminance', -1),
    'lighter': ('luminance', 1),
    'smaller': ('area', -1),
    'bigger': ('area', 1),
}


def plural(noun):
    return PLURALS[noun]


def is_withheld_combo(shape, color, combos=WITHHELD_COMBOS):
    return (shape, color) in set(tuple(c) for c in combos)


def family_count_set(family, count_sets):
    """Object counts allowed for a family, given the split's count sets."""
    rule = FAMILY_COUNTS[family]
    if rule is None:
        return tuple(sorted(count_sets))
    if rule == 'at-least-2':
        return tuple(sorted(c for c in count_sets if c >= 2))
    return tuple(rule)
