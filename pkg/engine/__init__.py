"""
Engine Package
Dense tensors with reverse-mode differentiation, the ops the models need,
Adam, checkpoints and the finite-difference gradient suite.
"""

from engine.tensor import Tensor, Tape, backward, precision, get_default_dtype
from engine.optim import AdamState, adam_step
from engine.checkpoint import Checkpoint

__all__ = ['Tensor', 'Tape', 'backward', 'precision', 'get_default_dtype',
           'AdamState', 'adam_step', 'Checkpoint']
