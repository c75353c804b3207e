"""
FiLM Network
Caption → embedding → GRU state. Image → six-layer conv trunk → four
residual blocks, each modulated per channel by γ and β predicted from the
caption state → 1×1 projection → global max-pool → MLP → 2 logits.

γ is predicted as 1 + δ with the δ/β heads zero-initialized, so a freshly
built network ignores the caption entirely.

Usage:
    from models.film import FiLMConfig, build_film

    model = build_film(FiLMConfig(cnn_channels=32, resblock_channels=32), vocab_size=len(vocab))
"""

import logging
from dataclasses import dataclass, asdict, fields

from errors import ConfigInvalid, ShapeMismatch
from engine import ops
from models.base import Model

logger = logging.getLogger(__name__)

TRUNK_LAYERS = 6
RESBLOCKS = 4


@dataclass(frozen=True)
class FiLMConfig:
    cnn_channels: int = 128
    cnn_layers: int = TRUNK_LAYERS
    resblocks: int = RESBLOCKS
    resblock_channels: int = 128
    embed_dim: int = 64
    gru_hidden: int = 256
    proj_dim: int = 512
    classifier_hidden: int = 1024
    use_coordinate_maps: bool = True
    image_size: int = 64

    def __post_init__(self):
        if self.cnn_layers != TRUNK_LAYERS:
            raise ConfigInvalid(f"film.cnn_layers is fixed at {TRUNK_LAYERS}, got {self.cnn_layers}")
        if self.resblocks != RESBLOCKS:
            raise ConfigInvalid(f"film.resblocks is fixed at {RESBLOCKS}, got {self.resblocks}")
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is int and (not isinstance(value, int) or isinstance(value, bool) or value < 1):
                raise ConfigInvalid(f"film.{f.name} must be a positive integer, got {value!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalid(f"unknown film config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


class FiLMNet(Model):
    arch = 'film'

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(config, vocab_size, seed)
        c = config
        self.ledger = self.add_trunk('trunk', c.cnn_channels, c.cnn_layers, c.image_size)
        self.feature_size = self.ledger[c.cnn_layers]

        # ── Caption encoder ──
        self.add_param('question.embed', (vocab_size, c.embed_dim), init='normal')
        h = c.gru_hidden
        self.add_param('question.gru.w_ih', (c.embed_dim, 3 * h), init='he', fan_in=c.embed_dim)
        self.add_param('question.gru.w_hh', (h, 3 * h), init='he', fan_in=h)
        self.add_param('question.gru.b_ih', (3 * h,), init='zeros')
        self.add_param('question.gru.b_hh', (3 * h,), init='zeros')

        # ── Residual blocks ──
        coords = 2 if c.use_coordinate_maps else 0
        n_in = c.cnn_channels
        for block in range(c.resblocks):
            prefix = f"res.{block}"
            self.add_conv(f"{prefix}.conv1", n_in + coords, c.resblock_channels, 1)
            self.add_conv(f"{prefix}.conv2", c.resblock_channels, c.resblock_channels, 3)
            self.add_batchnorm(f"{prefix}.bn", c.resblock_channels, affine=False)
            self.add_linear(f"{prefix}.film", h, 2 * c.resblock_channels, init='zeros')
            n_in = c.resblock_channels

        # ── Classifier ──
        self.add_conv('classifier.proj', n_in + coords, c.proj_dim, 1)
        self.add_batchnorm('classifier.bn', c.proj_dim)
        self.add_linear('classifier.hidden', c.proj_dim, c.classifier_hidden)
        self.add_linear('classifier.out', c.classifier_hidden, 2)

        logger.debug(f"FiLM: built {self.parameter_count():,} params, spatial ledger {self.ledger}")

    def encode_caption(self, tokens, lengths):
        embedded = ops.embedding_lookup(self.p('question.embed'), tokens)
        return ops.gru_sequence(embedded, lengths, self.p('question.gru.w_ih'), self.p('question.gru.w_hh'),
                                self.p('question.gru.b_ih'), self.p('question.gru.b_hh'))

    def film_parameters(self, state, block):
        """(γ, β) for one residual block, each N × resblock_channels."""
        channels = self.config.resblock_channels
        head = self.linear(state, f"res.{block}.film")
        gamma = ops.add(ops.slice_axis(head, 0, channels, axis=1), 1.0)
        beta = ops.slice_axis(head, channels, 2 * channels, axis=1)
        return gamma, beta

    def _with_coords(self, x):
        return ops.coordinate_maps(x) if self.config.use_coordinate_maps else x

    def _forward(self, images, tokens, lengths, modulate=True):
        c = self.config
        x = self.trunk(images, 'trunk', c.cnn_layers)
        if x.shape[2:] != (self.feature_size, self.feature_size):
            raise ShapeMismatch(f"trunk output {x.shape[2:]} disagrees with ledger size {self.feature_size}")
        state = self.encode_caption(tokens, lengths)

        for block in range(c.resblocks):
            prefix = f"res.{block}"
            residual = ops.relu(self.conv(self._with_coords(x), f"{prefix}.conv1"))
            y = self.conv(residual, f"{prefix}.conv2", padding=1)
            y = self.batchnorm(y, f"{prefix}.bn")
            if modulate:
                gamma, beta = self.film_parameters(state, block)
                y = ops.film(y, gamma, beta)
            x = ops.add(ops.relu(y), residual)

        x = ops.relu(self.batchnorm(self.conv(self._with_coords(x), 'classifier.proj'), 'classifier.bn'))
        pooled = ops.global_max_pool(x)
        hidden = ops.relu(self.linear(pooled, 'classifier.hidden'))
        return self.linear(hidden, 'classifier.out'), {}


def build_film(config, vocab_size, seed=0):
    if isinstance(config, dict):
        config = FiLMConfig.from_dict(config)
    return FiLMNet(config, vocab_size, seed=seed)
