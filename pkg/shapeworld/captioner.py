"""
Caption Sampler
Draws captions of a given family whose truth in a scene matches a requested
label, by rejection sampling over the family grammar.

Noun phrases are drawn from the scene's own objects most of the time so that
true captions stay reachable; the rest are drawn from the full attribute space.

Usage:
    from shapeworld.captioner import sample_caption

    caption = sample_caption('existential', scene, True, rng)
"""

import logging

from errors import ConfigError, SceneUnusable
from shapeworld.constants import (
    SHAPES, COLORS, FAMILIES, COMPARATORS, FRACTIONS, MAX_CAPTION_COUNT,
    RELATIONS, SPATIAL_RELATIONS, SELECTORS, SUPERLATIVES,
)
from shapeworld.semantics import (
    AttrNP, Existential, Logical, Number, Quantifier, Relational, ImplicitRelational,
    Superlative, Undefined, CONNECTIVES, DEFAULT_MARGINS, ZERO_MARGINS,
    evaluate, fix_paraphrases, quantifier_comparators,
)

logger = logging.getLogger(__name__)

DEFAULT_CAPTION_ATTEMPTS = 100

# Share of noun phrases built from an object in the scene.
SCENE_NP_RATE = 0.6

# Families whose labels must not change when comparison margins drop to zero.
MARGIN_CHECKED_FAMILIES = frozenset({'relational', 'simple-spatial', 'relational-negation'})


# ── Noun phrases ──

def _np_from_object(obj, rng):
    r = rng.random()
    if r < 0.4:
        return AttrNP(obj.shape, obj.color)
    if r < 0.7:
        return AttrNP(obj.shape, None)
    return AttrNP(None, obj.color)


def _random_np(rng):
    while True:
        np = AttrNP(rng.choice((None,) + SHAPES), rng.choice((None,) + COLORS))
        if not np.is_generic:
            return np


def _draw_np(scene, rng, generic_rate=0.0):
    if generic_rate and rng.random() < generic_rate:
        return AttrNP()
    if scene.objects and rng.random() < SCENE_NP_RATE:
        return _np_from_object(rng.choice(scene.objects), rng)
    return _random_np(rng)


def _generalizations(obj):
    return (AttrNP(obj.shape, obj.color), AttrNP(obj.shape, None), AttrNP(None, obj.color), AttrNP())


# ── Per-family drawers ──

def _draw_existential(scene, rng):
    described = _draw_np(scene, rng)
    if described.shape and described.color:
        split = rng.randrange(3)
        if split == 1:
            return Existential(AttrNP(color=described.color), AttrNP(shape=described.shape))
        if split == 2:
            return Existential(AttrNP(shape=described.shape), AttrNP(color=described.color))
    return Existential(AttrNP(), described)


def _draw_logical(scene, rng):
    return Logical(rng.choice(CONNECTIVES), _draw_existential(scene, rng), _draw_existential(scene, rng))


def _draw_number(scene, rng):
    restrictor = _draw_np(scene, rng, generic_rate=0.3)
    body = _draw_np(scene, rng)
    if rng.random() < 0.5:
        actual = sum(1 for o in scene.objects if restrictor.matches(o) and body.matches(o))
        count = min(MAX_CAPTION_COUNT, max(0, actual + rng.choice((-1, 0, 1))))
    else:
        count = rng.randrange(MAX_CAPTION_COUNT + 1)
    return Number(rng.choice(COMPARATORS), count, restrictor, body)


def _draw_quantifier(scene, rng):
    if rng.random() < 0.3 or not scene.objects:
        restrictor = AttrNP()
    else:
        restrictor = rng.choice(_generalizations(rng.choice(scene.objects))[:3])
    body = _draw_np(scene, rng)
    fraction = rng.choice(FRACTIONS)
    return Quantifier(rng.choice(quantifier_comparators(fraction)), fraction, restrictor, body)


def _draw_relational(relations, negation):
    def draw(scene, rng):
        subject = _draw_np(scene, rng, generic_rate=0.2)
        obj = _draw_np(scene, rng, generic_rate=0.2)
        negated = negation and rng.random() < 0.5
        return Relational(rng.choice(relations), subject, obj, negated)
    return draw


def _draw_simple_spatial(scene, rng):
    first, second = rng.sample(scene.objects, 2)
    return Relational(rng.choice(SPATIAL_RELATIONS), rng.choice(_generalizations(first)),
                      rng.choice(_generalizations(second)))


def _target_candidates(scene, predicate):
    seen = []
    for obj in scene.objects:
        for np in _generalizations(obj):
            if np not in seen and predicate(sum(1 for o in scene.objects if np.matches(o))):
                seen.append(np)
    return seen


def _draw_implicit(scene, rng):
    candidates = _target_candidates(scene, lambda n: n == 2)
    if not candidates:
        raise SceneUnusable('no description matches exactly two objects')
    target = rng.choice(candidates)
    body = _draw_np(scene, rng)
    return ImplicitRelational(rng.choice(SELECTORS), target, body)


def _draw_superlative(scene, rng):
    candidates = _target_candidates(scene, lambda n: n >= 2)
    if not candidates:
        raise SceneUnusable('no description matches two or more objects')
    target = rng.choice(candidates)
    body = _draw_np(scene, rng)
    return Superlative(rng.choice(tuple(SUPERLATIVES.values())), target, body)


_DRAWERS = {
    'existential': _draw_existential,
    'single-shape': _draw_existential,
    'logical': _draw_logical,
    'numbers': _draw_number,
    'quantifiers': _draw_quantifier,
    'relational': _draw_relational(RELATIONS, negation=False),
    'simple-spatial': _draw_simple_spatial,
    'relational-negation': _draw_relational(RELATIONS, negation=True),
    'implicit-relational': _draw_implicit,
    'superlatives': _draw_superlative,
}


# ── Filters ──

def described_combos(caption):
    """(shape, color) pairs a caption attributes to a single referent."""
    if isinstance(caption, Logical):
        return described_combos(caption.left) + described_combos(caption.right)
    if isinstance(caption, (Existential, Number, Quantifier)):
        referents = [caption.restrictor.merge(caption.body)]
    elif isinstance(caption, Relational):
        referents = [caption.subject, caption.object]
    else:
        referents = [caption.target.merge(caption.body)]
    return [(np.shape, np.color) for np in referents if np.shape and np.color]


def _same_single_referent(caption, scene):
    subjects = [i for i, o in enumerate(scene.objects) if caption.subject.matches(o)]
    objects = [i for i, o in enumerate(scene.objects) if caption.object.matches(o)]
    return len(subjects) == 1 and subjects == objects


def sample_caption(family, scene, target, rng, max_attempts=DEFAULT_CAPTION_ATTEMPTS,
                   avoid_combos=(), margins=DEFAULT_MARGINS):
    """
    Caption of the given family that evaluates to `target` on the scene.
    Raises SceneUnusable when max_attempts draws all miss.
    """
    if family not in _DRAWERS:
        raise ConfigError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    target = bool(target)
    avoid = set(tuple(c) for c in avoid_combos)
    draw = _DRAWERS[family]

    for _ in range(max_attempts):
        caption = draw(scene, rng)
        if avoid and any(combo in avoid for combo in described_combos(caption)):
            continue
        if isinstance(caption, Relational) and _same_single_referent(caption, scene):
            continue
        truth = evaluate(caption, scene, margins)
        if isinstance(truth, Undefined) or truth != target:
            continue
        if family in MARGIN_CHECKED_FAMILIES and evaluate(caption, scene, ZERO_MARGINS) != truth:
            continue
        return fix_paraphrases(caption, rng)

    raise SceneUnusable(f"{family}: no {str(target).lower()} caption within {max_attempts} attempts")
