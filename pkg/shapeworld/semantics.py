"""
Caption Semantics
Typed caption trees for the ten caption families, truth evaluation against
scenes (with presupposition failures reported as Undefined), English
realization, tokenization and the global vocabulary.

Usage:
    from shapeworld.semantics import AttrNP, Existential, evaluate, realize, tokenize

    caption = Existential(restrictor=AttrNP(color='red'), body=AttrNP(shape='square'))
    evaluate(caption, scene)            # True / False / Undefined(reason)
    realize(caption)                    # "There is a red square."
    tokenize(realize(caption))          # ['there', 'is', 'a', 'red', 'square']
"""

import hashlib
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache
from itertools import product

from errors import ConfigError
from shapeworld.constants import (
    SHAPES, COLORS, PLURALS, COMPARATORS, NUMBER_WORDS, MAX_CAPTION_COUNT, FRACTIONS,
    RELATIONS, SPATIAL_RELATIONS, SELECTORS, SUPERLATIVES, SELECTOR_AXES, RELATION_AXES,
)

logger = logging.getLogger(__name__)

CONNECTIVES = ('and', 'or', 'if', 'iff')

BASE_SELECTOR = {sup: base for base, sup in SUPERLATIVES.items()}


# ═══════════════════════════════════════════════════════════════
# Caption trees
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class AttrNP:
    """Attribute noun phrase. A missing shape renders as "shape"."""
    shape: str = None
    color: str = None

    @property
    def is_generic(self):
        return self.shape is None and self.color is None

    def matches(self, obj):
        return ((self.shape is None or obj.shape == self.shape)
                and (self.color is None or obj.color == self.color))

    def merge(self, other):
        return AttrNP(shape=self.shape or other.shape, color=self.color or other.color)

    def to_dict(self):
        return {'shape': self.shape, 'color': self.color}

    @classmethod
    def from_dict(cls, d):
        return cls(shape=d.get('shape'), color=d.get('color'))


@dataclass(frozen=True)
class Existential:
    restrictor: AttrNP
    body: AttrNP
    paraphrase: int = None
    kind = 'existential'


@dataclass(frozen=True)
class Logical:
    connective: str
    left: Existential
    right: Existential
    kind = 'logical'


@dataclass(frozen=True)
class Number:
    comparator: str
    count: int
    restrictor: AttrNP
    body: AttrNP
    kind = 'number'


@dataclass(frozen=True)
class Quantifier:
    comparator: str
    fraction: Fraction
    restrictor: AttrNP
    body: AttrNP
    kind = 'quantifier'


@dataclass(frozen=True)
class Relational:
    relation: str
    subject: AttrNP
    object: AttrNP
    negated: bool = False
    kind = 'relational'


@dataclass(frozen=True)
class ImplicitRelational:
    selector: str
    target: AttrNP
    body: AttrNP
    kind = 'implicit'


@dataclass(frozen=True)
class Superlative:
    selector: str       # superlative form, e.g. "lowermost"
    target: AttrNP
    body: AttrNP
    kind = 'superlative'


@dataclass(frozen=True)
class Undefined:
    """Presupposition failure. Never compares equal to True or False."""
    reason: str

    def __bool__(self):
        raise TypeError(f"Undefined({self.reason}) has no truth value")


@dataclass(frozen=True)
class Margins:
    """Minimum differences for comparative predicates to hold."""
    position: float = 0.05
    distance: float = 0.05
    luminance: float = 0.05
    area_ratio: float = 1.15


DEFAULT_MARGINS = Margins()
ZERO_MARGINS = Margins(position=0.0, distance=0.0, luminance=0.0, area_ratio=1.0)


def quantifier_comparators(fraction):
    """Comparators licensed for a fraction: "no" and "all" only take exactly / not-all."""
    if fraction == 0:
        return ('exactly',)
    if fraction == 1:
        return ('exactly', 'not-exactly')
    return COMPARATORS


def validate_caption(caption):
    """Raise ConfigError unless every slot holds a value of its closed set."""
    def check_np(np, allow_generic=True):
        if np.shape is not None and np.shape not in SHAPES:
            raise ConfigError(f"unknown shape {np.shape!r}")
        if np.color is not None and np.color not in COLORS:
            raise ConfigError(f"unknown color {np.color!r}")
        if not allow_generic and np.is_generic:
            raise ConfigError(f"{caption.kind}: body must name a shape or color")

    if isinstance(caption, Existential):
        check_np(caption.restrictor)
        check_np(caption.body, allow_generic=False)
        if caption.paraphrase is not None and caption.paraphrase not in licensed_paraphrases(caption):
            raise ConfigError(f"paraphrase {caption.paraphrase} not licensed for {caption}")
    elif isinstance(caption, Logical):
        if caption.connective not in CONNECTIVES:
            raise ConfigError(f"unknown connective {caption.connective!r}")
        validate_caption(caption.left)
        validate_caption(caption.right)
    elif isinstance(caption, Number):
        if caption.comparator not in COMPARATORS:
            raise ConfigError(f"unknown comparator {caption.comparator!r}")
        if not 0 <= caption.count <= MAX_CAPTION_COUNT:
            raise ConfigError(f"count {caption.count} outside 0..{MAX_CAPTION_COUNT}")
        check_np(caption.restrictor)
        check_np(caption.body, allow_generic=False)
    elif isinstance(caption, Quantifier):
        if caption.fraction not in FRACTIONS:
            raise ConfigError(f"unsupported fraction {caption.fraction}")
        if caption.comparator not in quantifier_comparators(caption.fraction):
            raise ConfigError(f"comparator {caption.comparator!r} not licensed for fraction {caption.fraction}")
        check_np(caption.restrictor)
        check_np(caption.body, allow_generic=False)
    elif isinstance(caption, Relational):
        if caption.relation not in RELATIONS:
            raise ConfigError(f"unknown relation {caption.relation!r}")
        check_np(caption.subject)
        check_np(caption.object)
    elif isinstance(caption, ImplicitRelational):
        if caption.selector not in SELECTORS:
            raise ConfigError(f"unknown selector {caption.selector!r}")
        check_np(caption.target)
        check_np(caption.body, allow_generic=False)
    elif isinstance(caption, Superlative):
        if caption.selector not in BASE_SELECTOR:
            raise ConfigError(f"unknown superlative {caption.selector!r}")
        check_np(caption.target)
        check_np(caption.body, allow_generic=False)
    else:
        raise ConfigError(f"not a caption: {caption!r}")
    return caption


# ── JSON ──

def caption_to_dict(caption):
    if isinstance(caption, Existential):
        return {'kind': caption.kind, 'restrictor': caption.restrictor.to_dict(),
                'body': caption.body.to_dict(), 'paraphrase': caption.paraphrase}
    if isinstance(caption, Logical):
        return {'kind': caption.kind, 'connective': caption.connective,
                'left': caption_to_dict(caption.left), 'right': caption_to_dict(caption.right)}
    if isinstance(caption, Number):
        return {'kind': caption.kind, 'comparator': caption.comparator, 'count': caption.count,
                'restrictor': caption.restrictor.to_dict(), 'body': caption.body.to_dict()}
    if isinstance(caption, Quantifier):
        return {'kind': caption.kind, 'comparator': caption.comparator,
                'fraction': str(caption.fraction),
                'restrictor': caption.restrictor.to_dict(), 'body': caption.body.to_dict()}
    if isinstance(caption, Relational):
        return {'kind': caption.kind, 'relation': caption.relation, 'negated': caption.negated,
                'subject': caption.subject.to_dict(), 'object': caption.object.to_dict()}
    if isinstance(caption, (ImplicitRelational, Superlative)):
        return {'kind': caption.kind, 'selector': caption.selector,
                'target': caption.target.to_dict(), 'body': caption.body.to_dict()}
    raise ConfigError(f"not a caption: {caption!r}")


def caption_from_dict(d):
    kind = d.get('kind')
    if kind == 'existential':
        caption = Existential(AttrNP.from_dict(d['restrictor']), AttrNP.from_dict(d['body']),
                              d.get('paraphrase'))
    elif kind == 'logical':
        caption = Logical(d['connective'], caption_from_dict(d['left']), caption_from_dict(d['right']))
    elif kind == 'number':
        caption = Number(d['comparator'], d['count'], AttrNP.from_dict(d['restrictor']),
                         AttrNP.from_dict(d['body']))
    elif kind == 'quantifier':
        caption = Quantifier(d['comparator'], Fraction(d['fraction']),
                             AttrNP.from_dict(d['restrictor']), AttrNP.from_dict(d['body']))
    elif kind == 'relational':
        caption = Relational(d['relation'], AttrNP.from_dict(d['subject']),
                             AttrNP.from_dict(d['object']), bool(d.get('negated', False)))
    elif kind == 'implicit':
        caption = ImplicitRelational(d['selector'], AttrNP.from_dict(d['target']),
                                     AttrNP.from_dict(d['body']))
    elif kind == 'superlative':
        caption = Superlative(d['selector'], AttrNP.from_dict(d['target']), AttrNP.from_dict(d['body']))
    else:
        raise ConfigError(f"unknown caption kind {kind!r}")
    return validate_caption(caption)


# ═══════════════════════════════════════════════════════════════
# Evaluation
# ═══════════════════════════════════════════════════════════════

def _attribute(obj, axis):
    if axis == 'x':
        return obj.center[0]
    if axis == 'y':
        return obj.center[1]
    return getattr(obj, axis)


def beyond(a, b, axis, direction, margins=DEFAULT_MARGINS):
    """True when a lies past b in the given direction along an axis, by more than the margin."""
    va, vb = _attribute(a, axis), _attribute(b, axis)
    if axis == 'area':
        ratio = margins.area_ratio
        return va > vb * ratio if direction > 0 else va * ratio < vb
    margin = {
        'x': margins.position,
        'y': margins.position,
        'distance': margins.distance,
        'luminance': margins.luminance,
    }[axis]
    return (va - vb) * direction > margin


def relation_holds(relation, a, b, margins=DEFAULT_MARGINS):
    if relation == 'same-shape':
        return a.shape == b.shape
    if relation == 'same-color':
        return a.color == b.color
    if relation == 'different-shape':
        return a.shape != b.shape
    if relation == 'different-color':
        return a.color != b.color
    axis, direction = RELATION_AXES[relation]
    return beyond(a, b, axis, direction, margins)


def compare(value, comparator, reference):
    if comparator == 'less-than':
        return value < reference
    if comparator == 'more-than':
        return value > reference
    if comparator == 'at-most':
        return value <= reference
    if comparator == 'at-least':
        return value >= reference
    if comparator == 'exactly':
        return value == reference
    if comparator == 'not-exactly':
        return value != reference
    raise ConfigError(f"unknown comparator {comparator!r}")


def evaluate(caption, scene, margins=DEFAULT_MARGINS):
    """Truth of a caption in a scene: True, False or Undefined(reason)."""
    objects = scene.objects

    if isinstance(caption, Existential):
        return any(caption.restrictor.matches(o) and caption.body.matches(o) for o in objects)

    if isinstance(caption, Logical):
        left = evaluate(caption.left, scene, margins)
        if isinstance(left, Undefined):
            return left
        right = evaluate(caption.right, scene, margins)
        if isinstance(right, Undefined):
            return right
        if caption.connective == 'and':
            return left and right
        if caption.connective == 'or':
            return left or right
        if caption.connective == 'if':
            return (not left) or right
        return left == right

    if isinstance(caption, Number):
        n = sum(1 for o in objects if caption.restrictor.matches(o) and caption.body.matches(o))
        return compare(n, caption.comparator, caption.count)

    if isinstance(caption, Quantifier):
        restricted = [o for o in objects if caption.restrictor.matches(o)]
        if not restricted:
            return Undefined('empty-restrictor')
        ratio = Fraction(sum(1 for o in restricted if caption.body.matches(o)), len(restricted))
        return compare(ratio, caption.comparator, caption.fraction)

    if isinstance(caption, Relational):
        for i, a in enumerate(objects):
            if not caption.subject.matches(a):
                continue
            for j, b in enumerate(objects):
                if i == j or not caption.object.matches(b):
                    continue
                if relation_holds(caption.relation, a, b, margins) != caption.negated:
                    return True
        return False

    if isinstance(caption, ImplicitRelational):
        targets = [o for o in objects if caption.target.matches(o)]
        if len(targets) != 2:
            return Undefined('not-exactly-two')
        axis, direction = SELECTOR_AXES[caption.selector]
        a, b = targets
        if beyond(a, b, axis, direction, margins):
            return caption.body.matches(a)
        if beyond(b, a, axis, direction, margins):
            return caption.body.matches(b)
        return Undefined('not-separated')

    if isinstance(caption, Superlative):
        targets = [o for o in objects if caption.target.matches(o)]
        if len(targets) < 2:
            return Undefined('fewer-than-two')
        axis, direction = SELECTOR_AXES[BASE_SELECTOR[caption.selector]]
        for i, candidate in enumerate(targets):
            if all(beyond(candidate, other, axis, direction, margins)
                   for j, other in enumerate(targets) if j != i):
                return caption.body.matches(candidate)
        return Undefined('not-separated')

    raise ConfigError(f"not a caption: {caption!r}")


# ═══════════════════════════════════════════════════════════════
# Realization
# ═══════════════════════════════════════════════════════════════

COMPARATOR_WORDS = {
    'less-than': 'less than',
    'more-than': 'more than',
    'at-most': 'at most',
    'at-least': 'at least',
    'exactly': 'exactly',
    'not-exactly': 'not exactly',
}

FRACTION_WORDS = {
    Fraction(1, 4): 'a quarter of the',
    Fraction(1, 3): 'a third of the',
    Fraction(1, 2): 'half the',
    Fraction(2, 3): 'two thirds of the',
    Fraction(3, 4): 'three quarters of the',
}

# relation → (positive, negated) verb phrase
RELATION_PHRASES = {
    'left': ('is to the left of', 'is not to the left of'),
    'right': ('is to the right of', 'is not to the right of'),
    'above': ('is above', 'is not above'),
    'below': ('is below', 'is not below'),
    'closer': ('is closer to the center than', 'is not closer to the center than'),
    'farther': ('is farther from the center than', 'is not farther from the center than'),
    'darker': ('is darker than', 'is not darker than'),
    'lighter': ('is lighter than', 'is not lighter than'),
    'smaller': ('is smaller than', 'is not smaller than'),
    'bigger': ('is bigger than', 'is not bigger than'),
    'same-shape': ('has the same shape as', 'does not have the same shape as'),
    'same-color': ('has the same color as', 'does not have the same color as'),
    'different-shape': ('has a different shape than', 'does not have a different shape than'),
    'different-color': ('has a different color than', 'does not have a different color than'),
}

# Words used only inside fixed frames.
FRAME_WORDS = 'there is are a an the no all not if then and or only'


def _noun(np, plural=False):
    noun = np.shape or 'shape'
    if plural:
        noun = PLURALS[noun]
    return f"{np.color} {noun}" if np.color else noun


def _indefinite(phrase):
    return ('an ' if phrase[0] in 'aeiou' else 'a ') + phrase


def _predicate(body, plural=False):
    if body.shape is None:
        return body.color
    if plural:
        return _noun(body, plural=True)
    return _indefinite(_noun(body))


def licensed_paraphrases(caption):
    """Existential surface variants: 0 = "There is a ...", 1 = "A ... is ..."."""
    r, b = caption.restrictor, caption.body
    if (r.shape and b.shape) or (r.color and b.color):
        return (1,)
    return (0, 1)


def fix_paraphrases(caption, rng=None):
    """Record a paraphrase choice on every existential in the caption."""
    if isinstance(caption, Existential):
        if caption.paraphrase is not None:
            return caption
        options = licensed_paraphrases(caption)
        choice = rng.choice(options) if rng is not None else options[0]
        return replace(caption, paraphrase=choice)
    if isinstance(caption, Logical):
        return replace(caption, left=fix_paraphrases(caption.left, rng),
                       right=fix_paraphrases(caption.right, rng))
    return caption


def _clause(caption, rng):
    if isinstance(caption, Existential):
        paraphrase = fix_paraphrases(caption, rng).paraphrase
        if paraphrase == 0:
            return f"there is {_indefinite(_noun(caption.restrictor.merge(caption.body)))}"
        return f"{_indefinite(_noun(caption.restrictor))} is {_predicate(caption.body)}"

    if isinstance(caption, Logical):
        left, right = _clause(caption.left, rng), _clause(caption.right, rng)
        if caption.connective == 'if':
            return f"if {left} then {right}"
        if caption.connective == 'iff':
            return f"{left} if and only if {right}"
        return f"{left} {caption.connective} {right}"

    if isinstance(caption, Number):
        plural = caption.count != 1
        verb = 'are' if plural else 'is'
        return (f"{COMPARATOR_WORDS[caption.comparator]} {NUMBER_WORDS[caption.count]} "
                f"{_noun(caption.restrictor, plural)} {verb} {_predicate(caption.body, plural)}")

    if isinstance(caption, Quantifier):
        restrictor = _noun(caption.restrictor, plural=True)
        body = _predicate(caption.body, plural=True)
        if caption.fraction == 0:
            return f"no {restrictor} are {body}"
        if caption.fraction == 1:
            lead = 'all' if caption.comparator == 'exactly' else 'not all'
            return f"{lead} {restrictor} are {body}"
        return (f"{COMPARATOR_WORDS[caption.comparator]} {FRACTION_WORDS[caption.fraction]} "
                f"{restrictor} are {body}")

    if isinstance(caption, Relational):
        phrase = RELATION_PHRASES[caption.relation][1 if caption.negated else 0]
        return (f"{_indefinite(_noun(caption.subject))} {phrase} "
                f"{_indefinite(_noun(caption.object))}")

    if isinstance(caption, (ImplicitRelational, Superlative)):
        return f"the {caption.selector} {_noun(caption.target)} is {_predicate(caption.body)}"

    raise ConfigError(f"not a caption: {caption!r}")


def realize(caption, rng=None):
    """English sentence for a caption. Unrecorded paraphrase choices are drawn from rng."""
    clause = _clause(caption, rng)
    return clause[0].upper() + clause[1:] + '.'


# ═══════════════════════════════════════════════════════════════
# Tokens & vocabulary
# ═══════════════════════════════════════════════════════════════

PAD_TOKEN = '<pad>'
UNK_TOKEN = '<unk>'
PAD_ID = 0
UNK_ID = 1


def tokenize(surface):
    """Lowercase, strip periods, split on whitespace."""
    return surface.lower().replace('.', ' ').split()


class Vocabulary:
    """Token ↔ id map. Id 0 is padding, id 1 is unknown."""

    def __init__(self, tokens):
        self.tokens = (PAD_TOKEN, UNK_TOKEN) + tuple(tokens)
        self.index = {token: i for i, token in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    def id(self, token):
        return self.index.get(token, UNK_ID)

    def encode(self, tokens):
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids if i != PAD_ID]

    def digest(self):
        return hashlib.sha256('\n'.join(self.tokens).encode('utf-8')).hexdigest()

    def to_dict(self):
        return {'tokens': list(self.tokens), 'digest': self.digest()}


def _vocabulary_fragments():
    yield FRAME_WORDS
    yield from SHAPES
    yield from (PLURALS[s] for s in PLURALS)
    yield from COLORS
    yield from COMPARATOR_WORDS.values()
    yield from NUMBER_WORDS
    yield from FRACTION_WORDS.values()
    for positive, negated in RELATION_PHRASES.values():
        yield positive
        yield negated
    yield from SELECTORS
    yield from SUPERLATIVES.values()


@lru_cache(maxsize=1)
def build_vocabulary():
    """The single vocabulary shared by every family, sorted for stable ids."""
    tokens = set()
    for fragment in _vocabulary_fragments():
        tokens.update(tokenize(fragment))
    return Vocabulary(sorted(tokens))


# ═══════════════════════════════════════════════════════════════
# Grammar enumeration
# ═══════════════════════════════════════════════════════════════

def noun_phrases(shapes=SHAPES, colors=COLORS, generic=True):
    for shape, color in product((None,) + tuple(shapes), (None,) + tuple(colors)):
        np = AttrNP(shape, color)
        if generic or not np.is_generic:
            yield np


def _existentials(shapes, colors):
    for restrictor in noun_phrases(shapes, colors):
        for body in noun_phrases(shapes, colors, generic=False):
            base = Existential(restrictor, body)
            for paraphrase in licensed_paraphrases(base):
                yield replace(base, paraphrase=paraphrase)


def enumerate_captions(family, shapes=SHAPES, colors=COLORS, logical_operands=None):
    """Every caption of a family's grammar over the given attribute sets."""
    nps = list(noun_phrases(shapes, colors))
    bodies = list(noun_phrases(shapes, colors, generic=False))

    if family in ('existential', 'single-shape'):
        yield from _existentials(shapes, colors)
    elif family == 'logical':
        operands = list(logical_operands) if logical_operands is not None else list(_existentials(shapes, colors))
        for connective in CONNECTIVES:
            for left, right in product(operands, operands):
                yield Logical(connective, left, right)
    elif family == 'numbers':
        for comparator, count, restrictor, body in product(COMPARATORS, range(MAX_CAPTION_COUNT + 1), nps, bodies):
            yield Number(comparator, count, restrictor, body)
    elif family == 'quantifiers':
        for fraction in FRACTIONS:
            for comparator, restrictor, body in product(quantifier_comparators(fraction), nps, bodies):
                yield Quantifier(comparator, fraction, restrictor, body)
    elif family in ('relational', 'relational-negation', 'simple-spatial'):
        relations = SPATIAL_RELATIONS if family == 'simple-spatial' else RELATIONS
        negations = (False, True) if family == 'relational-negation' else (False,)
        for relation, subject, obj, negated in product(relations, nps, nps, negations):
            yield Relational(relation, subject, obj, negated)
    elif family == 'implicit-relational':
        for selector, target, body in product(SELECTORS, nps, bodies):
            yield ImplicitRelational(selector, target, body)
    elif family == 'superlatives':
        for selector, target, body in product(SUPERLATIVES.values(), nps, bodies):
            yield Superlative(selector, target, body)
    else:
        raise ConfigError(f"unknown family {family!r}")
