import random
from fractions import Fraction
from itertools import combinations, combinations_with_replacement, islice, permutations, product

import pytest

from conftest import make_object, make_scene
from errors import ConfigError, SceneUnusable
from oracle import oracle_truth
from shapeworld.captioner import described_combos, sample_caption
from shapeworld.constants import COLORS, COMPARATORS, COMPLEMENT, FAMILIES, PLURALS, SHAPES, WITHHELD_COMBOS
from shapeworld.semantics import (
    AttrNP, Existential, ImplicitRelational, Logical, Number, Quantifier, Relational, Superlative, Undefined,
    PAD_ID, UNK_ID, build_vocabulary, caption_from_dict, caption_to_dict, enumerate_captions, evaluate,
    realize, relation_holds, tokenize, validate_caption, ZERO_MARGINS,
)
from shapeworld.worldgen import SceneSpec, Scene, WorldObject, sample_scene

MINI_SHAPES = ('square', 'circle', 'triangle')
MINI_COLORS = ('red', 'green', 'blue')


def red_square():
    return Existential(AttrNP(color='red'), AttrNP(shape='square'), paraphrase=0)


# ── evaluate ──

def test_existential_true_on_matching_object():
    scene = make_scene(make_object('square', 'red'))
    assert evaluate(red_square(), scene) is True


def test_existential_false_without_match():
    scene = make_scene(make_object('circle', 'blue'))
    assert evaluate(red_square(), scene) is False


def test_more_than_half_the_pentagons_are_red():
    scene = make_scene(
        make_object('pentagon', 'red', x=0.2, y=0.2),
        make_object('pentagon', 'red', x=0.5, y=0.5),
        make_object('pentagon', 'blue', x=0.8, y=0.8),
    )
    caption = Quantifier('more-than', Fraction(1, 2), AttrNP(shape='pentagon'), AttrNP(color='red'))
    assert evaluate(caption, scene) is True


def test_quantifier_over_empty_restrictor_is_undefined():
    caption = Quantifier('at-least', Fraction(1, 2), AttrNP(shape='cross'), AttrNP(color='red'))
    truth = evaluate(caption, make_scene(make_object('square', 'red')))
    assert truth == Undefined('empty-restrictor')


def test_number_allows_empty_restrictor():
    caption = Number('exactly', 0, AttrNP(shape='cross'), AttrNP(color='red'))
    assert evaluate(caption, make_scene(make_object('square', 'red'))) is True


def test_left_circle_is_blue():
    caption = ImplicitRelational('left', AttrNP(shape='circle'), AttrNP(color='blue'))
    scene = make_scene(make_object('circle', 'blue', x=0.2), make_object('circle', 'red', x=0.7))
    assert evaluate(caption, scene) is True

    crowded = make_scene(make_object('circle', 'blue', x=0.2), make_object('circle', 'red', x=0.5),
                         make_object('circle', 'green', x=0.8))
    assert evaluate(caption, crowded) == Undefined('not-exactly-two')


def test_implicit_relational_needs_separation():
    caption = ImplicitRelational('left', AttrNP(shape='circle'), AttrNP(color='blue'))
    scene = make_scene(make_object('circle', 'blue', x=0.50), make_object('circle', 'red', x=0.52, y=0.2))
    assert evaluate(caption, scene) == Undefined('not-separated')


def test_lowermost_yellow_shape():
    caption = Superlative('lowermost', AttrNP(color='yellow'), AttrNP(shape='circle'))
    scene = make_scene(make_object('square', 'yellow', y=0.2), make_object('circle', 'yellow', y=0.8),
                       make_object('cross', 'yellow', y=0.5, x=0.2))
    assert evaluate(caption, scene) is True
    assert evaluate(caption, make_scene(make_object('circle', 'yellow'))) == Undefined('fewer-than-two')


def test_relational_uses_distinct_objects():
    caption = Relational('left', AttrNP(shape='square'), AttrNP(shape='square'))
    assert evaluate(caption, make_scene(make_object('square', 'red'))) is False


def test_negated_relation_complements_inside_the_pair():
    a = make_object('square', 'red', x=0.2)
    b = make_object('circle', 'blue', x=0.8)
    caption = Relational('left', AttrNP(shape='circle'), AttrNP(shape='square'), negated=True)
    assert evaluate(caption, make_scene(a, b)) is True
    caption = Relational('left', AttrNP(shape='square'), AttrNP(shape='circle'), negated=True)
    assert evaluate(caption, make_scene(a, b)) is False


def test_logical_connectives():
    scene = make_scene(make_object('square', 'red'))
    true, false = red_square(), Existential(AttrNP(), AttrNP(shape='cross'), paraphrase=0)
    assert evaluate(Logical('and', true, false), scene) is False
    assert evaluate(Logical('or', true, false), scene) is True
    assert evaluate(Logical('if', false, false), scene) is True
    assert evaluate(Logical('if', true, false), scene) is False
    assert evaluate(Logical('iff', false, false), scene) is True


def test_undefined_has_no_truth_value():
    with pytest.raises(TypeError):
        bool(Undefined('not-separated'))


# ── properties ──

def _random_scenes(count, seed):
    rng = random.Random(seed)
    spec = SceneSpec(count_sets=(1, 2, 3, 4, 6, 7))
    return [sample_scene(spec, rng) for _ in range(count)]


def test_number_comparators_complement_each_other():
    restrictors = [AttrNP(), AttrNP(color='red'), AttrNP(shape='square')]
    for scene in _random_scenes(20, seed=1):
        for comparator in COMPARATORS:
            for count in range(6):
                for restrictor in restrictors:
                    body = AttrNP(color='green')
                    truth = evaluate(Number(comparator, count, restrictor, body), scene)
                    other = evaluate(Number(COMPLEMENT[comparator], count, restrictor, body), scene)
                    assert truth is (not other)


def test_at_least_quantifier_is_monotone():
    fractions = [Fraction(0), Fraction(1, 4), Fraction(1, 3), Fraction(1, 2), Fraction(2, 3), Fraction(3, 4)]
    for scene in _random_scenes(20, seed=2):
        for color in COLORS:
            truths = [evaluate(Quantifier('at-least', f, AttrNP(), AttrNP(color=color)), scene)
                      for f in fractions if f > 0]
            for i, truth in enumerate(truths):
                if truth:
                    assert all(truths[:i + 1])


def test_relations_are_mirror_images():
    rng = random.Random(4)
    for scene in _random_scenes(20, seed=3):
        objects = scene.objects
        for _ in range(10):
            a, b = rng.choice(objects), rng.choice(objects)
            assert relation_holds('left', a, b) == relation_holds('right', b, a)
            assert relation_holds('above', a, b) == relation_holds('below', b, a)
            assert relation_holds('smaller', a, b) == relation_holds('bigger', b, a)
            assert relation_holds('same-shape', a, b) == relation_holds('same-shape', b, a)
            assert relation_holds('same-shape', a, a)


# ── oracle equivalence ──
# Every scene of a small grid against every caption a family's grammar
# produces over the same attributes. Existential, number and quantifier truth
# depends only on the (shape, color) pairs present; the geometric families
# also read position, size and shade, which come from three placements that
# are separated on some axes and tied within the margin on others.

GRID_SHAPES = ('square', 'circle')
GRID_COLORS = ('red', 'blue')

ATTRIBUTE_FAMILIES = ('existential', 'numbers', 'quantifiers')
GEOMETRIC_FAMILIES = ('relational', 'relational-negation', 'simple-spatial', 'implicit-relational', 'superlatives')

# (center, size, shade)
PLACEMENTS = (
    ((0.2, 0.5), 0.2, 1.0),
    ((0.5, 0.5), 0.1, 0.6),
    ((0.52, 0.8), 0.2, 0.6),
)

MIRRORED = {'left': 'right', 'above': 'below', 'closer': 'farther', 'darker': 'lighter', 'smaller': 'bigger'}


def _grid_object(shape, color, placement=PLACEMENTS[1]):
    center, size, shade = placement
    return WorldObject(shape=shape, color=color, shade=shade, center=center, size=(size, size), rotation=0.0)


def _attribute_scenes(shapes, colors, max_objects):
    """Every multiset of up to max_objects (shape, color) pairs."""
    pairs = list(product(shapes, colors))
    for n in range(1, max_objects + 1):
        for chosen in combinations_with_replacement(pairs, n):
            yield Scene(objects=tuple(_grid_object(s, c) for s, c in chosen))


def _pair_set_scenes(shapes, colors):
    """One scene per non-empty set of (shape, color) pairs."""
    pairs = list(product(shapes, colors))
    for n in range(1, len(pairs) + 1):
        for chosen in combinations(pairs, n):
            yield Scene(objects=tuple(_grid_object(s, c) for s, c in chosen))


def _geometric_scenes(shapes, colors):
    """Every choice of distinct placements, with every (shape, color) on each."""
    pairs = list(product(shapes, colors))
    for n in range(1, len(PLACEMENTS) + 1):
        for placements in combinations(PLACEMENTS, n):
            for chosen in product(pairs, repeat=n):
                yield Scene(objects=tuple(_grid_object(s, c, p) for (s, c), p in zip(chosen, placements)))


def _as_oracle_value(truth):
    return truth.reason if isinstance(truth, Undefined) else truth


def _check_against_oracle(families, shapes, colors, scenes):
    captions = [(c, caption_to_dict(c)) for family in families for c in enumerate_captions(family, shapes, colors)]
    outcomes = set()
    for scene in scenes:
        for caption, ast in captions:
            expected = oracle_truth(ast, scene.objects)
            assert _as_oracle_value(evaluate(caption, scene)) == expected, (ast, scene)
            outcomes.add((ast['kind'], expected))
    return outcomes


def test_placements_separate_and_tie_every_comparison():
    objects = [_grid_object(s, c, p) for s, c in product(GRID_SHAPES, GRID_COLORS) for p in PLACEMENTS]
    for relation, mirror in MIRRORED.items():
        seen = {(relation_holds(relation, a, b), relation_holds(mirror, a, b)) for a, b in permutations(objects, 2)}
        assert seen == {(True, False), (False, True), (False, False)}, relation


def test_attribute_families_match_the_oracle():
    outcomes = _check_against_oracle(ATTRIBUTE_FAMILIES, GRID_SHAPES, GRID_COLORS,
                                      _attribute_scenes(GRID_SHAPES, GRID_COLORS, 4))
    assert {('number', True), ('number', False), ('quantifier', 'empty-restrictor')} <= outcomes
    assert {('quantifier', True), ('quantifier', False)} <= outcomes


def test_logical_family_matches_the_oracle():
    shapes, colors = GRID_SHAPES, ('red',)
    outcomes = _check_against_oracle(('logical',), shapes, colors, _pair_set_scenes(shapes, colors))
    assert outcomes == {('logical', True), ('logical', False)}


def test_geometric_families_match_the_oracle():
    outcomes = _check_against_oracle(GEOMETRIC_FAMILIES, GRID_SHAPES, GRID_COLORS,
                                      _geometric_scenes(GRID_SHAPES, GRID_COLORS))
    assert {('relational', True), ('relational', False)} <= outcomes
    for kind, reason in (('implicit', 'not-exactly-two'), ('implicit', 'not-separated'),
                         ('superlative', 'fewer-than-two'), ('superlative', 'not-separated')):
        assert (kind, reason) in outcomes
        assert (kind, True) in outcomes and (kind, False) in outcomes


@pytest.mark.slow
def test_every_family_matches_the_oracle_on_the_wider_grid():
    _check_against_oracle(ATTRIBUTE_FAMILIES, MINI_SHAPES, MINI_COLORS, _attribute_scenes(MINI_SHAPES, MINI_COLORS, 4))
    _check_against_oracle(('logical',), GRID_SHAPES, GRID_COLORS, _pair_set_scenes(GRID_SHAPES, GRID_COLORS))
    _check_against_oracle(GEOMETRIC_FAMILIES, MINI_SHAPES, MINI_COLORS, _geometric_scenes(MINI_SHAPES, MINI_COLORS))


# ── realization & tokens ──

def test_existential_paraphrases():
    assert realize(red_square()) == 'There is a red square.'
    caption = Existential(AttrNP(color='red'), AttrNP(shape='square'), paraphrase=1)
    assert realize(caption) == 'A red shape is a square.'


def test_logical_surface():
    left = Existential(AttrNP(color='cyan'), AttrNP(shape='square'), paraphrase=0)
    right = Existential(AttrNP(shape='circle'), AttrNP(color='green'), paraphrase=1)
    assert realize(Logical('or', left, right)) == 'There is a cyan square or a circle is green.'


def test_family_surfaces():
    assert realize(Superlative('lowermost', AttrNP(color='yellow'), AttrNP(shape='circle'))) == \
        'The lowermost yellow shape is a circle.'
    assert realize(Quantifier('more-than', Fraction(1, 2), AttrNP(shape='pentagon'), AttrNP(color='red'))) == \
        'More than half the pentagons are red.'
    assert realize(Relational('left', AttrNP('cross', 'red'), AttrNP(color='yellow'))) == \
        'A red cross is to the left of a yellow shape.'
    assert realize(Number('exactly', 2, AttrNP(shape='square'), AttrNP(color='red'))) == \
        'Exactly two squares are red.'
    assert realize(Number('at-least', 1, AttrNP(), AttrNP(shape='ellipse'))) == \
        'At least one shape is an ellipse.'
    assert realize(ImplicitRelational('left', AttrNP(shape='circle'), AttrNP(color='blue'))) == \
        'The left circle is blue.'


def test_quantifier_endpoints():
    assert realize(Quantifier('exactly', Fraction(0), AttrNP(shape='square'), AttrNP(color='red'))) == \
        'No squares are red.'
    assert realize(Quantifier('not-exactly', Fraction(1), AttrNP(shape='square'), AttrNP(color='red'))) == \
        'Not all squares are red.'


def test_tokenize():
    assert tokenize('There is a red square.') == ['there', 'is', 'a', 'red', 'square']
    assert tokenize('') == []


def test_vocabulary_membership_and_stability(vocab):
    for token in ('square', 'pentagons', 'lowermost', 'half'):
        assert token in vocab
    assert vocab.tokens[PAD_ID] == '<pad>'
    assert vocab.tokens[UNK_ID] == '<unk>'
    again = build_vocabulary()
    assert again == vocab
    assert again.digest() == vocab.digest()


def test_grammar_has_no_unknown_tokens(vocab):
    for family in FAMILIES:
        captions = enumerate_captions(family, ('pentagon', 'cross', 'ellipse'), ('magenta', 'yellow'))
        for caption in islice(captions, 3000):
            assert UNK_ID not in vocab.encode(tokenize(realize(caption, random.Random(0))))
    for shape in SHAPES:
        for color in COLORS:
            assert UNK_ID not in vocab.encode([shape, PLURALS[shape], color])


def test_sampled_captions_have_no_unknown_tokens(vocab):
    rng = random.Random(8)
    for family in FAMILIES:
        spec = SceneSpec(count_sets=(1,) if family == 'single-shape' else (2,) if family == 'simple-spatial'
                         else (2, 3, 4, 6))
        produced = 0
        while produced < 15:
            scene = sample_scene(spec, rng)
            try:
                caption = sample_caption(family, scene, produced % 2 == 0, rng)
            except SceneUnusable:
                continue
            assert UNK_ID not in vocab.encode(tokenize(realize(caption)))
            produced += 1


# ── caption sampling ──

@pytest.mark.parametrize('family', FAMILIES)
@pytest.mark.parametrize('target', [True, False])
def test_sampled_caption_rechecks_to_target(family, target):
    rng = random.Random(FAMILIES.index(family) * 2 + int(target))
    spec = SceneSpec(count_sets=(1,) if family == 'single-shape' else (2,) if family == 'simple-spatial'
                     else (2, 3, 4))
    found = 0
    for _ in range(50):
        scene = sample_scene(spec, rng)
        try:
            caption = sample_caption(family, scene, target, rng)
        except SceneUnusable:
            continue
        assert evaluate(caption, scene) is target
        found += 1
        if found == 5:
            break
    assert found == 5


def test_simple_spatial_uses_the_four_spatial_relations():
    rng = random.Random(12)
    spec = SceneSpec(count_sets=(2,))
    for _ in range(10):
        scene = sample_scene(spec, rng)
        try:
            caption = sample_caption('simple-spatial', scene, True, rng)
        except SceneUnusable:
            continue
        assert caption.relation in ('left', 'right', 'above', 'below')


@pytest.mark.parametrize('family', ['relational', 'simple-spatial', 'relational-negation'])
def test_geometric_captions_keep_their_truth_without_margins(family):
    rng = random.Random(33)
    spec = SceneSpec(count_sets=(2,) if family == 'simple-spatial' else (2, 3, 4))
    found = 0
    for attempt in range(60):
        scene = sample_scene(spec, rng)
        try:
            caption = sample_caption(family, scene, attempt % 2 == 0, rng)
        except SceneUnusable:
            continue
        assert evaluate(caption, scene, ZERO_MARGINS) == evaluate(caption, scene)
        found += 1
    assert found > 0


def test_pairs_inside_the_position_margin_never_back_a_true_spatial_caption():
    # x differs by 0.02, y is equal: no pair is separated by the 0.05 margin
    scene = make_scene(make_object('square', 'red', x=0.3, y=0.5), make_object('circle', 'blue', x=0.32, y=0.5))
    with pytest.raises(SceneUnusable):
        sample_caption('simple-spatial', scene, True, random.Random(0), max_attempts=200)
    caption = sample_caption('simple-spatial', scene, False, random.Random(0), max_attempts=200)
    assert evaluate(caption, scene) is False
    assert evaluate(caption, scene, ZERO_MARGINS) is False


def test_single_shape_false_caption():
    scene = make_scene(make_object('circle', 'blue'))
    caption = sample_caption('existential', scene, False, random.Random(0))
    assert evaluate(caption, scene) is False


def test_caption_sampling_can_avoid_withheld_combos():
    rng = random.Random(21)
    for _ in range(30):
        scene = sample_scene(SceneSpec(count_sets=(2, 3)), rng)
        try:
            caption = sample_caption('existential', scene, True, rng, avoid_combos=WITHHELD_COMBOS)
        except SceneUnusable:
            continue
        assert not set(described_combos(caption)) & set(WITHHELD_COMBOS)


def test_unknown_family_is_a_config_error():
    with pytest.raises(ConfigError):
        sample_caption('nosuch', make_scene(make_object()), True, random.Random(0))


# ── JSON & validation ──

def test_caption_json_preserves_ast():
    caption = Logical('iff', red_square(), Existential(AttrNP(shape='circle'), AttrNP(color='green'), 1))
    assert caption_from_dict(caption_to_dict(caption)) == caption


def test_validation_rejects_unlicensed_quantifier():
    with pytest.raises(ConfigError):
        validate_caption(Quantifier('more-than', Fraction(0), AttrNP(), AttrNP(color='red')))
    with pytest.raises(ConfigError):
        caption_from_dict({'kind': 'nosuch'})
