"""
Model Base
Named parameter registry, batch-norm buffers, train/eval mode and the
convolutional trunk shared by every architecture.

Usage:
    class MyNet(Model):
        arch = 'mine'

        def __init__(self, config, vocab_size, seed=0):
            super().__init__(config, vocab_size, seed)
            self.add_param('head.weight', (4, 2))
"""

import logging

import numpy as np

from errors import ConfigInvalid, ShapeMismatch
from engine import ops
from engine.tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)

# Trunk layers (1-based) that halve the spatial size.
STRIDED_LAYERS = (3, 6)


def conv_output_size(size, kernel=3, stride=1, padding=1):
    return (size + 2 * padding - kernel) // stride + 1


class Model:
    """Base class. Subclasses set `arch` and implement `_forward`."""

    arch = None

    def __init__(self, config, vocab_size, seed=0):
        if vocab_size < 2:
            raise ConfigInvalid(f"vocab_size must be >= 2, got {vocab_size}")
        self.config = config
        self.vocab_size = int(vocab_size)
        self.vocab_digest = None
        self.params = {}
        self.buffers = {}
        self.training = True
        self._rng = np.random.default_rng(seed)

    # ── Registry ──

    def add_param(self, name, shape, init='he', fan_in=None):
        if name in self.params:
            raise ConfigInvalid(f"duplicate parameter name {name}")
        dtype = get_default_dtype()
        if init == 'zeros':
            data = np.zeros(shape)
        elif init == 'ones':
            data = np.ones(shape)
        elif init == 'he':
            fan_in = fan_in or int(np.prod(shape[1:] if len(shape) == 4 else shape[:1]))
            data = self._rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif init == 'normal':
            data = self._rng.standard_normal(shape) * 0.1
        else:
            raise ConfigInvalid(f"unknown initializer {init!r}")
        self.params[name] = Tensor(data, requires_grad=True, dtype=dtype, name=name)
        return self.params[name]

    def add_batchnorm(self, prefix, channels, affine=True):
        if affine:
            self.add_param(f"{prefix}.gamma", (channels,), init='ones')
            self.add_param(f"{prefix}.beta", (channels,), init='zeros')
        dtype = get_default_dtype()
        self.buffers[f"{prefix}.running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers[f"{prefix}.running_var"] = np.ones(channels, dtype=dtype)

    def add_linear(self, prefix, n_in, n_out, init='he'):
        self.add_param(f"{prefix}.weight", (n_in, n_out), init=init, fan_in=n_in)
        self.add_param(f"{prefix}.bias", (n_out,), init='zeros')

    def add_conv(self, prefix, n_in, n_out, kernel, bias=True):
        self.add_param(f"{prefix}.weight", (n_out, n_in, kernel, kernel), init='he')
        if bias:
            self.add_param(f"{prefix}.bias", (n_out,), init='zeros')

    # ── Layer helpers ──

    def p(self, name):
        return self.params[name]

    def linear(self, x, prefix):
        return ops.linear(x, self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"])

    def conv(self, x, prefix, stride=1, padding=0):
        return ops.conv2d(x, self.params[f"{prefix}.weight"], self.params.get(f"{prefix}.bias"),
                          stride=stride, padding=padding)

    def batchnorm(self, x, prefix):
        state = ops.BatchNormState(self.buffers, prefix)
        return ops.batchnorm2d(x, self.params.get(f"{prefix}.gamma"), self.params.get(f"{prefix}.beta"),
                               state=state, mode='train' if self.training else 'eval')

    # ── Shared trunk ──

    def add_trunk(self, prefix, channels, layers, image_size):
        """
        [conv3×3 + BN + ReLU] × layers, stride 2 at STRIDED_LAYERS. Returns the
        spatial-size ledger {layer number: side length}.
        """
        ledger = {}
        size = image_size
        n_in = 3
        for layer in range(1, layers + 1):
            self.add_conv(f"{prefix}.{layer}.conv", n_in, channels, 3, bias=False)
            self.add_batchnorm(f"{prefix}.{layer}.bn", channels)
            size = conv_output_size(size, stride=2 if layer in STRIDED_LAYERS else 1)
            if size < 1:
                raise ConfigInvalid(f"image_size {image_size} collapses to nothing at trunk layer {layer}")
            ledger[layer] = size
            n_in = channels
        return ledger

    def trunk(self, x, prefix, layers):
        for layer in range(1, layers + 1):
            x = self.conv(x, f"{prefix}.{layer}.conv", stride=2 if layer in STRIDED_LAYERS else 1, padding=1)
            x = ops.relu(self.batchnorm(x, f"{prefix}.{layer}.bn"))
        return x

    # ── Mode & bookkeeping ──

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def parameter_count(self):
        return int(sum(p.size for p in self.params.values()))

    def state_arrays(self):
        return ({name: p.data for name, p in self.params.items()},
                {name: b for name, b in self.buffers.items()})

    def load_arrays(self, params, buffers):
        """Replace parameter and buffer values in place; names and shapes must match."""
        if set(params) != set(self.params) or set(buffers) != set(self.buffers):
            missing = sorted(set(self.params) ^ set(params)) + sorted(set(self.buffers) ^ set(buffers))
            raise ShapeMismatch(f"parameter names differ: {', '.join(missing[:5])}")
        for name, array in params.items():
            if array.shape != self.params[name].shape:
                raise ShapeMismatch(f"{name}: checkpoint {array.shape} vs model {self.params[name].shape}")
            self.params[name].data = np.array(array, dtype=self.params[name].data.dtype)
        for name, array in buffers.items():
            self.buffers[name] = np.array(array, dtype=self.buffers[name].dtype)

    def check_inputs(self, images, tokens, lengths):
        images = np.asarray(images)
        tokens = np.asarray(tokens)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ShapeMismatch(f"images must be N×3×H×W, got {images.shape}")
        if tokens.ndim != 2 or tokens.shape[0] != images.shape[0] or len(lengths) != images.shape[0]:
            raise ShapeMismatch(f"tokens {tokens.shape} / lengths {len(lengths)} for {images.shape[0]} images")
        side = self.config.image_size
        if images.shape[2:] != (side, side):
            raise ShapeMismatch(f"model built for {side}×{side} images, got {images.shape[2]}×{images.shape[3]}")
        dtype = next(iter(self.params.values())).data.dtype
        return Tensor(images, dtype=dtype), tokens, np.asarray(lengths)

    def _forward(self, images, tokens, lengths, **options):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(arch={self.arch}, params={self.parameter_count():,})"
