"""
Tensor Engine
Dense numpy-backed arrays with reverse-mode differentiation.

Operations record (inputs, output, backward closure) on the innermost active
Tape whenever one of their inputs requires gradients. The tape is already in
topological order, so backward walks it once in reverse and accumulates
gradients additively wherever a value fans out.

Usage:
    from engine.tensor import Tensor, Tape, backward
    from engine import ops

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape():
        loss = ops.reduce_sum(ops.matmul(x, w))
    grads = backward(loss)          # {w: ndarray}, also stored on w.grad
"""

import logging
import threading
from contextlib import contextmanager

import numpy as np

from errors import ShapeMismatch

logger = logging.getLogger(__name__)

_state = threading.local()


# ── Precision ──

def get_default_dtype():
    return getattr(_state, 'dtype', np.float32)


@contextmanager
def precision(dtype):
    """Temporarily create new tensors in another float dtype (float64 for gradient checks)."""
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


# ═══════════════════════════════════════════════════════════════
# Tensor
# ═══════════════════════════════════════════════════════════════

class Tensor:
    """
    A value with an optional gradient. The array passed in is copied, so two
    independently created tensors never share storage.
    """

    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_tape')

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        dtype = dtype or get_default_dtype()
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None

    @classmethod
    def _wrap(cls, array, requires_grad):
        """Adopt a freshly computed array without copying it."""
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.copy()

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ''
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"


def as_tensor(value, like=None):
    """Wrap constants; tensors pass through unchanged."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


# ═══════════════════════════════════════════════════════════════
# Tape
# ═══════════════════════════════════════════════════════════════

class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        stack = getattr(_state, 'tapes', None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, inputs, output, backward_fn):
        self.records.append((tuple(inputs), output, backward_fn))
        output._tape = self

    def backward(self, loss, grad=None):
        """
        Propagate from `loss` through the recorded operations. Returns
        {leaf tensor: gradient} and stores each on leaf.grad (added to any
        gradient already there).
        """
        if grad is None:
            if loss.size != 1:
                raise ShapeMismatch(f"backward needs a scalar loss or an explicit grad, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        grads = {id(loss): grad}
        tensors = {id(loss): loss}
        produced = set()

        for inputs, output, backward_fn in reversed(self.records):
            produced.add(id(output))
            upstream = grads.pop(id(output), None)
            if upstream is None:
                continue
            for tensor, g in zip(inputs, backward_fn(upstream)):
                if g is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                tensors[key] = tensor
                grads[key] = g if key not in grads else grads[key] + g

        leaves = {}
        for key, g in grads.items():
            if key in produced:
                continue
            tensor = tensors[key]
            tensor.grad = g if tensor.grad is None else tensor.grad + g
            leaves[tensor] = g
        return leaves


def active_tape():
    stack = getattr(_state, 'tapes', None)
    return stack[-1] if stack else None


def result(array, inputs, backward_fn):
    """Wrap an op's output and record it when gradients are needed."""
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(array, needs_grad)
    if needs_grad:
        tape.record(inputs, out, backward_fn)
    return out


def backward(loss, grad=None):
    """Gradients of a scalar loss with respect to every leaf that requires them."""
    if loss._tape is None:
        raise ShapeMismatch('loss was not produced under an active Tape')
    return loss._tape.backward(loss, grad)
