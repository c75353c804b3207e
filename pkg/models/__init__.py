"""
Model Registry
Architecture tags → (config class, builder), batched forward with a
finite-activation check, and checkpoint save/load with the architecture and
config embedded.

Usage:
    from models import build_model, forward, save_model, load_model

    model = build_model('film', run_config['film'], vocab_size=len(vocab))
    logits = forward(model, batch.images, batch.tokens, batch.lengths)
"""

import logging

import numpy as np

from errors import ConfigInvalid, ArchitectureMismatch, NonFiniteActivation
from engine.checkpoint import Checkpoint
from models.base import Model
from models.film import FiLMConfig, FiLMNet, build_film
from models.baselines import BaselineConfig, CnnLstm, CnnLstmSA, build_cnn_lstm, build_cnn_lstm_sa

logger = logging.getLogger(__name__)

ARCHITECTURES = {
    'film': (FiLMConfig, build_film, 'film'),
    'cnn-lstm': (BaselineConfig, build_cnn_lstm, 'baseline'),
    'cnn-lstm-sa': (BaselineConfig, build_cnn_lstm_sa, 'baseline'),
}


def _lookup(arch):
    if arch not in ARCHITECTURES:
        raise ConfigInvalid(f"unknown model {arch!r}; expected one of {', '.join(ARCHITECTURES)}")
    return ARCHITECTURES[arch]


def config_section(arch):
    """Run-config section holding an architecture's settings."""
    return _lookup(arch)[2]


def build_model(arch, config, vocab_size, seed=0, vocab_digest=None):
    config_cls, builder, _ = _lookup(arch)
    if isinstance(config, dict):
        config = config_cls.from_dict(config)
    model = builder(config, vocab_size, seed=seed)
    model.vocab_digest = vocab_digest
    logger.info(f"Models: built {arch} with {model.parameter_count():,} parameters")
    return model


def forward(model, images, tokens, lengths, return_extras=False, **options):
    """
    2-class logits for a batch. Raises NonFiniteActivation when any logit
    is NaN or infinite.
    """
    images, tokens, lengths = model.check_inputs(images, tokens, lengths)
    logits, extras = model._forward(images, tokens, lengths, **options)
    if not np.isfinite(logits.data).all():
        raise NonFiniteActivation(f"{model.arch}: non-finite logits")
    return (logits, extras) if return_extras else logits


def parameter_count(model):
    return model.parameter_count()


# ═══════════════════════════════════════════════════════════════
# Checkpoints
# ═══════════════════════════════════════════════════════════════

def to_checkpoint(model, optimizer=None, meta=None):
    params, buffers = model.state_arrays()
    ckpt = Checkpoint(arch=model.arch, config=model.config.to_dict(),
                      vocab={'size': model.vocab_size, 'digest': model.vocab_digest},
                      params=params, buffers=buffers, meta=meta or {})
    if optimizer is not None:
        ckpt.optimizer = dict(optimizer.hyperparameters(), step=optimizer.step)
        ckpt.adam_m = dict(optimizer.m)
        ckpt.adam_v = dict(optimizer.v)
    return ckpt


def save_model(model, path, optimizer=None, meta=None):
    return to_checkpoint(model, optimizer, meta).save(path)


def model_from_checkpoint(ckpt):
    model = build_model(ckpt.arch, ckpt.config, ckpt.vocab['size'], vocab_digest=ckpt.vocab.get('digest'))
    model.load_arrays(ckpt.params, ckpt.buffers)
    return model


def load_model(path):
    """Rebuild a model exactly as saved. Returns (model, checkpoint)."""
    ckpt = Checkpoint.load(path)
    return model_from_checkpoint(ckpt), ckpt


def check_compatible(ckpt, arch, config, vocab_size, vocab_digest=None):
    """Raise ArchitectureMismatch unless a checkpoint can seed a model of this shape."""
    if ckpt.arch != arch:
        raise ArchitectureMismatch(f"checkpoint is {ckpt.arch}, requested {arch}")
    config_cls = _lookup(arch)[0]
    expected = (config_cls.from_dict(config) if isinstance(config, dict) else config).to_dict()
    if ckpt.config != expected:
        differing = sorted(k for k in expected if ckpt.config.get(k) != expected[k])
        raise ArchitectureMismatch(f"checkpoint config differs in: {', '.join(differing)}")
    if ckpt.vocab['size'] != vocab_size:
        raise ArchitectureMismatch(f"checkpoint vocabulary has {ckpt.vocab['size']} tokens, data has {vocab_size}")
    if vocab_digest and ckpt.vocab.get('digest') and ckpt.vocab['digest'] != vocab_digest:
        raise ArchitectureMismatch('checkpoint vocabulary digest differs from the dataset vocabulary')


__all__ = ['Model', 'FiLMConfig', 'FiLMNet', 'BaselineConfig', 'CnnLstm', 'CnnLstmSA', 'ARCHITECTURES',
           'build_model', 'build_film', 'build_cnn_lstm', 'build_cnn_lstm_sa', 'forward',
           'parameter_count', 'save_model', 'load_model', 'model_from_checkpoint', 'to_checkpoint',
           'check_compatible', 'config_section']
