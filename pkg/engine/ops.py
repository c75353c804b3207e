"""
Differentiable Operations
Every function takes Tensors (or constants), returns a new Tensor and never
modifies its inputs. Backward closures return one gradient per input, in
input order, or None where an input needs none.

Layouts: images and feature maps are NCHW; sequences are N×T×E; dense
layers multiply on the right by an (in, out) weight.
"""

import logging

import numpy as np

from errors import ShapeMismatch, NonFiniteLoss
from engine.tensor import Tensor, as_tensor, result

logger = logging.getLogger(__name__)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ═══════════════════════════════════════════════════════════════
# Elementwise
# ═══════════════════════════════════════════════════════════════

def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, 'sub')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, 'mul')

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return result(a.data * b.data, (a, b), backward)


def where(mask, a, b):
    """Select a where mask is true, else b. The mask is a constant boolean array."""
    mask = np.asarray(mask, dtype=bool)
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_check(a, b, 'where')
    zero = np.zeros((), dtype=a.data.dtype)

    def backward(g):
        return (_unbroadcast(np.where(mask, g, zero), a.shape),
                _unbroadcast(np.where(mask, zero, g), b.shape))
    return result(np.where(mask, a.data, b.data), (a, b), backward)


def relu(x):
    positive = x.data > 0
    zero = np.zeros((), dtype=x.data.dtype)

    def backward(g):
        return (np.where(positive, g, zero),)
    return result(np.where(positive, x.data, zero), (x,), backward)


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1.0 - out),)
    return result(out, (x,), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)
    return result(out, (x,), backward)


# ═══════════════════════════════════════════════════════════════
# Shape
# ═══════════════════════════════════════════════════════════════

def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {x.shape} as {shape}")

    def backward(g):
        return (g.reshape(x.shape),)
    return result(out.copy(), (x,), backward)


def transpose(x, axes):
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)
    return result(x.data.transpose(axes).copy(), (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(t.shape[d] != first.shape[d]
                                       for d in range(first.ndim) if d != axis % first.ndim):
            raise ShapeMismatch(f"concat: {[t.shape for t in tensors]} differ off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def slice_axis(x, start, stop, axis):
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)
    return result(x.data[index].copy(), (x,), backward)


def reduce_sum(x, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def reduce_mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    total = reduce_sum(x, axis=axis, keepdims=keepdims)
    return mul(total, np.asarray(1.0 / count, dtype=x.data.dtype))


# ═══════════════════════════════════════════════════════════════
# Dense
# ═══════════════════════════════════════════════════════════════

def matmul(a, w):
    """(..., I) @ (I, O) → (..., O)."""
    if w.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {w.shape}")

    def backward(g):
        ga = g @ w.data.T
        gw = a.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1])
        return ga, gw
    return result(a.data @ w.data, (a, w), backward)


def linear(x, w, b=None):
    out = matmul(x, w)
    return out if b is None else add(out, b)


def embedding_lookup(table, ids):
    """Rows of a V×E table for integer ids of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding_lookup: ids outside [0, {table.shape[0]})")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)
    return result(table.data[ids], (table,), backward)


# ═══════════════════════════════════════════════════════════════
# Convolutional
# ═══════════════════════════════════════════════════════════════

def conv2d(x, w, b=None, stride=1, padding=0):
    """
    Cross-correlation of NCHW input with O×C×k×k kernels, zero padding.
    Accumulates one k×k offset at a time in a fixed order.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"conv2d: input {x.shape} vs kernels {w.shape}")
    if stride not in (1, 2):
        raise ShapeMismatch(f"conv2d: stride must be 1 or 2, got {stride}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv2d: bias {b.shape} for {w.shape[0]} output channels")

    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p, s = padding, stride
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: {h}×{wd} input too small for kernel {k}, padding {p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((o, n, ho, wo), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            window = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
            out += np.tensordot(w.data[:, :, i, j], window, axes=([1], [1]))
    out = out.transpose(1, 0, 2, 3).copy()
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g):
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                window = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
                gw[:, :, i, j] = np.tensordot(g, window, axes=([0, 2, 3], [0, 2, 3]))
                gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += np.tensordot(
                    w.data[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        gx = gxp[:, :, p:p + h, p:p + wd]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return result(out, inputs, backward)


class BatchNormState:
    """Running statistics kept in a model's buffer store under a name prefix."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    @property
    def mean(self):
        return self.store[f"{self.prefix}.running_mean"]

    @property
    def var(self):
        return self.store[f"{self.prefix}.running_var"]

    def update(self, batch_mean, batch_var, momentum):
        self.store[f"{self.prefix}.running_mean"] = (
            (1.0 - momentum) * self.mean + momentum * batch_mean).astype(self.mean.dtype)
        self.store[f"{self.prefix}.running_var"] = (
            (1.0 - momentum) * self.var + momentum * batch_var).astype(self.var.dtype)


def batchnorm2d(x, gamma=None, beta=None, state=None, mode='train', momentum=0.1, eps=1e-5):
    """
    Per-channel normalization of NCHW input. Without gamma/beta the op is
    affine-free. Train mode uses batch statistics and updates `state`;
    eval mode reads the running statistics from `state`.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"batchnorm2d: expected NCHW, got {x.shape}")
    affine = gamma is not None and beta is not None
    n, c, h, w = x.shape
    if affine and (gamma.shape != (c,) or beta.shape != (c,)):
        raise ShapeMismatch(f"batchnorm2d: gamma {gamma.shape} / beta {beta.shape} for {c} channels")
    axes = (0, 2, 3)
    m = n * h * w

    if mode == 'train':
        if m < 2:
            raise ShapeMismatch(f"batchnorm2d: train mode needs N·H·W >= 2, got {m}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if state is not None:
            state.update(mean, var * m / (m - 1), momentum)
    elif mode == 'eval':
        if state is None:
            raise ShapeMismatch('batchnorm2d: eval mode needs running statistics')
        mean = state.mean.astype(x.data.dtype)
        var = state.var.astype(x.data.dtype)
    else:
        raise ShapeMismatch(f"batchnorm2d: unknown mode {mode!r}")

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.data.dtype)
    inv_b = inv_std[None, :, None, None]
    xhat = (x.data - mean[None, :, None, None]) * inv_b
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None] if affine else xhat

    def backward(g):
        gxhat = g * gamma.data[None, :, None, None] if affine else g
        if mode == 'train':
            gx = (inv_b / m) * (m * gxhat
                                - gxhat.sum(axis=axes, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv_b
        if affine:
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
        return (gx,)

    inputs = (x, gamma, beta) if affine else (x,)
    return result(out, inputs, backward)


def film(x, gamma, beta):
    """Feature-wise affine modulation: gamma[n,c]·x[n,c,h,w] + beta[n,c]."""
    if x.ndim != 4 or gamma.shape != x.shape[:2] or beta.shape != x.shape[:2]:
        raise ShapeMismatch(f"film: features {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    gb = gamma.data[:, :, None, None]

    def backward(g):
        return g * gb, (g * x.data).sum(axis=(2, 3)), g.sum(axis=(2, 3))
    return result(gb * x.data + beta.data[:, :, None, None], (x, gamma, beta), backward)


def global_max_pool(x):
    """NCHW → N×C maximum over positions. Ties send the gradient to the first maximum."""
    if x.ndim != 4:
        raise ShapeMismatch(f"global_max_pool: expected NCHW, got {x.shape}")
    n, c = x.shape[:2]
    flat = x.data.reshape(n, c, -1)
    idx = flat.argmax(axis=-1)[..., None]

    def backward(g):
        grad = np.zeros_like(flat)
        np.put_along_axis(grad, idx, g[..., None], axis=-1)
        return (grad.reshape(x.shape),)
    return result(np.take_along_axis(flat, idx, axis=-1)[..., 0], (x,), backward)


def global_avg_pool(x):
    if x.ndim != 4:
        raise ShapeMismatch(f"global_avg_pool: expected NCHW, got {x.shape}")
    area = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / area, x.shape).copy(),)
    return result(x.data.mean(axis=(2, 3)), (x,), backward)


def coordinate_maps(x):
    """Append two constant channels: x-coordinate across W, y-coordinate across H, both in [-1, 1]."""
    if x.ndim != 4:
        raise ShapeMismatch(f"coordinate_maps: expected NCHW, got {x.shape}")
    n, _, h, w = x.shape
    xs = np.broadcast_to(np.linspace(-1.0, 1.0, w)[None, :], (h, w))
    ys = np.broadcast_to(np.linspace(-1.0, 1.0, h)[:, None], (h, w))
    coords = np.broadcast_to(np.stack([xs, ys])[None], (n, 2, h, w))
    return concat([x, Tensor(coords, dtype=x.data.dtype)], axis=1)


# ═══════════════════════════════════════════════════════════════
# Losses & attention
# ═══════════════════════════════════════════════════════════════

def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n = logits.shape[0]
    rows = np.arange(n)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[rows, labels].mean()
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)
    return result(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return result(out, (x,), backward)


def softmax_attention_pool(values, scores):
    """
    Attend over L positions: values N×L×C, scores N×L. Returns the attended
    N×C tensor and the N×L attention weights (softmax over positions).
    """
    if values.ndim != 3 or scores.shape != values.shape[:2]:
        raise ShapeMismatch(f"softmax_attention_pool: values {values.shape}, scores {scores.shape}")
    shifted = scores.data - scores.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=1, keepdims=True)
    attended = np.einsum('nl,nlc->nc', weights, values.data)

    def backward(g):
        gv = weights[:, :, None] * g[:, None, :]
        gw = np.einsum('nc,nlc->nl', g, values.data)
        gs = weights * (gw - (gw * weights).sum(axis=1, keepdims=True))
        return gv, gs
    return result(attended, (values, scores), backward), weights.copy()


# ═══════════════════════════════════════════════════════════════
# Recurrent
# ═══════════════════════════════════════════════════════════════

def _step_inputs(embedded, lengths):
    if embedded.ndim != 3:
        raise ShapeMismatch(f"recurrent: expected N×T×E, got {embedded.shape}")
    lengths = np.asarray(lengths, dtype=np.int64)
    n, t, _ = embedded.shape
    if lengths.shape != (n,) or (lengths > t).any() or (lengths < 0).any():
        raise ShapeMismatch(f"recurrent: lengths {lengths.tolist()} for {n} sequences of {t} steps")
    return lengths, n, t


def gru_sequence(embedded, lengths, w_ih, w_hh, b_ih, b_hh):
    """
    Final GRU state of each sequence at its true length (zeros for empty
    sequences). Gate order in the 3H blocks: reset, update, candidate.
    Steps past a sequence's length carry the previous state through exactly.
    """
    lengths, n, t = _step_inputs(embedded, lengths)
    hidden = w_hh.shape[0]
    if w_ih.shape != (embedded.shape[2], 3 * hidden) or w_hh.shape != (hidden, 3 * hidden):
        raise ShapeMismatch(f"gru_sequence: w_ih {w_ih.shape}, w_hh {w_hh.shape}")
    h = Tensor(np.zeros((n, hidden)), dtype=embedded.data.dtype)

    for step in range(t):
        active = (lengths > step)[:, None]
        if not active.any():
            break
        x_t = reshape(slice_axis(embedded, step, step + 1, axis=1), (n, embedded.shape[2]))
        xi = linear(x_t, w_ih, b_ih)
        hh = linear(h, w_hh, b_hh)
        reset = sigmoid(add(slice_axis(xi, 0, hidden, 1), slice_axis(hh, 0, hidden, 1)))
        update = sigmoid(add(slice_axis(xi, hidden, 2 * hidden, 1), slice_axis(hh, hidden, 2 * hidden, 1)))
        candidate = tanh(add(slice_axis(xi, 2 * hidden, 3 * hidden, 1),
                             mul(reset, slice_axis(hh, 2 * hidden, 3 * hidden, 1))))
        new_h = add(mul(sub(1.0, update), candidate), mul(update, h))
        h = where(active, new_h, h)
    return h


def lstm_sequence(embedded, lengths, w_ih, w_hh, b):
    """
    Final LSTM hidden state at each sequence's true length. Gate order in
    the 4H blocks: input, forget, cell, output.
    """
    lengths, n, t = _step_inputs(embedded, lengths)
    hidden = w_hh.shape[0]
    if w_ih.shape != (embedded.shape[2], 4 * hidden) or w_hh.shape != (hidden, 4 * hidden):
        raise ShapeMismatch(f"lstm_sequence: w_ih {w_ih.shape}, w_hh {w_hh.shape}")
    h = Tensor(np.zeros((n, hidden)), dtype=embedded.data.dtype)
    cell = Tensor(np.zeros((n, hidden)), dtype=embedded.data.dtype)

    for step in range(t):
        active = (lengths > step)[:, None]
        if not active.any():
            break
        x_t = reshape(slice_axis(embedded, step, step + 1, axis=1), (n, embedded.shape[2]))
        gates = add(linear(x_t, w_ih, b), matmul(h, w_hh))
        i = sigmoid(slice_axis(gates, 0, hidden, 1))
        f = sigmoid(slice_axis(gates, hidden, 2 * hidden, 1))
        g = tanh(slice_axis(gates, 2 * hidden, 3 * hidden, 1))
        o = sigmoid(slice_axis(gates, 3 * hidden, 4 * hidden, 1))
        new_cell = add(mul(f, cell), mul(i, g))
        new_h = mul(o, tanh(new_cell))
        cell = where(active, new_cell, cell)
        h = where(active, new_h, h)
    return h
