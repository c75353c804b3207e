"""
Baseline Models
CNN-LSTM: average-pooled trunk features concatenated with the LSTM caption
state, then an MLP. CNN-LSTM-SA: the caption state queries the trunk feature
map through stacked attention glimpses, each glimpse adding its attended
vector to the query, then an MLP.
"""

import logging
from dataclasses import dataclass, asdict, fields

from errors import ConfigInvalid
from engine import ops
from models.base import Model

logger = logging.getLogger(__name__)

TRUNK_LAYERS = 6


@dataclass(frozen=True)
class BaselineConfig:
    cnn_channels: int = 64
    embed_dim: int = 64
    lstm_hidden: int = 256
    mlp_hidden: int = 512
    glimpses: int = 2
    attention_dim: int = 256
    image_size: int = 64

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigInvalid(f"baseline.{f.name} must be a positive integer, got {value!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalid(f"unknown baseline config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


class _LstmBaseline(Model):

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(config, vocab_size, seed)
        c = config
        self.ledger = self.add_trunk('trunk', c.cnn_channels, TRUNK_LAYERS, c.image_size)
        h = c.lstm_hidden
        self.add_param('question.embed', (vocab_size, c.embed_dim), init='normal')
        self.add_param('question.lstm.w_ih', (c.embed_dim, 4 * h), init='he', fan_in=c.embed_dim)
        self.add_param('question.lstm.w_hh', (h, 4 * h), init='he', fan_in=h)
        self.add_param('question.lstm.bias', (4 * h,), init='zeros')

    def encode_caption(self, tokens, lengths):
        embedded = ops.embedding_lookup(self.p('question.embed'), tokens)
        return ops.lstm_sequence(embedded, lengths, self.p('question.lstm.w_ih'),
                                 self.p('question.lstm.w_hh'), self.p('question.lstm.bias'))


class CnnLstm(_LstmBaseline):
    arch = 'cnn-lstm'

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(config, vocab_size, seed)
        c = config
        self.add_linear('classifier.hidden', c.cnn_channels + c.lstm_hidden, c.mlp_hidden)
        self.add_linear('classifier.out', c.mlp_hidden, 2)

    def classify(self, features, state):
        """Logits from a trunk feature map and a caption state."""
        joint = ops.concat([ops.global_avg_pool(features), state], axis=1)
        return self.linear(ops.relu(self.linear(joint, 'classifier.hidden')), 'classifier.out')

    def _forward(self, images, tokens, lengths):
        features = self.trunk(images, 'trunk', TRUNK_LAYERS)
        return self.classify(features, self.encode_caption(tokens, lengths)), {}


class CnnLstmSA(_LstmBaseline):
    arch = 'cnn-lstm-sa'

    def __init__(self, config, vocab_size, seed=0):
        super().__init__(config, vocab_size, seed)
        c = config
        self.add_linear('attention.query', c.lstm_hidden, c.cnn_channels)
        for glimpse in range(c.glimpses):
            prefix = f"attention.{glimpse}"
            self.add_linear(f"{prefix}.image", c.cnn_channels, c.attention_dim)
            self.add_linear(f"{prefix}.question", c.cnn_channels, c.attention_dim)
            self.add_linear(f"{prefix}.score", c.attention_dim, 1)
        self.add_linear('classifier.hidden', c.cnn_channels, c.mlp_hidden)
        self.add_linear('classifier.out', c.mlp_hidden, 2)

    def _forward(self, images, tokens, lengths):
        c = self.config
        features = self.trunk(images, 'trunk', TRUNK_LAYERS)
        n, channels, h, w = features.shape
        values = ops.transpose(ops.reshape(features, (n, channels, h * w)), (0, 2, 1))
        query = self.linear(self.encode_caption(tokens, lengths), 'attention.query')

        weights = []
        for glimpse in range(c.glimpses):
            prefix = f"attention.{glimpse}"
            projected_image = self.linear(values, f"{prefix}.image")
            projected_query = ops.reshape(self.linear(query, f"{prefix}.question"), (n, 1, c.attention_dim))
            joint = ops.tanh(ops.add(projected_image, projected_query))
            scores = ops.reshape(self.linear(joint, f"{prefix}.score"), (n, h * w))
            attended, glimpse_weights = ops.softmax_attention_pool(values, scores)
            query = ops.add(query, attended)
            weights.append(glimpse_weights)

        logits = self.linear(ops.relu(self.linear(query, 'classifier.hidden')), 'classifier.out')
        return logits, {'attention': weights}


def build_cnn_lstm(config, vocab_size, seed=0):
    if isinstance(config, dict):
        config = BaselineConfig.from_dict(config)
    return CnnLstm(config, vocab_size, seed=seed)


def build_cnn_lstm_sa(config, vocab_size, seed=0):
    if isinstance(config, dict):
        config = BaselineConfig.from_dict(config)
    return CnnLstmSA(config, vocab_size, seed=seed)
