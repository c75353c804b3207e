"""
Finite-Difference Gradient Checks
Compares every op's analytic backward against central differences in
float64. The scalar objective is sum(out · R) for a fixed random R, so every
output element contributes to the check.

Usage:
    from engine.gradcheck import run_suite

    rows = run_suite(seeds=20)
    failed = [r for r in rows if not r['passed']]
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from engine import ops
from engine.tensor import Tensor, Tape, backward, precision

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-6
# Denominator floor for near-zero gradients.
ABS_FLOOR = 1e-2


def relative_error(analytic, numeric):
    if not analytic.size:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _objective(fn, arrays, weights):
    out = fn(*[Tensor(a) for a in arrays])
    return float(np.sum(out.data * weights))


def check_gradients(fn, arrays, rng, step=STEP):
    """
    Max relative error between backward() and central differences for
    fn(*tensors) over every element of every input.
    """
    with precision(np.float64):
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        inputs = [Tensor(a, requires_grad=True) for a in arrays]
        with Tape():
            out = fn(*inputs)
            weights = rng.standard_normal(out.shape)
            loss = ops.reduce_sum(ops.mul(out, Tensor(weights)))
        analytic = backward(loss)

        worst = 0.0
        for k, (tensor, base) in enumerate(zip(inputs, arrays)):
            grad = analytic.get(tensor, np.zeros_like(base))
            numeric = np.zeros_like(base)
            shifted = list(arrays)
            for idx in np.ndindex(base.shape):
                nudged = base.copy()
                nudged[idx] = base[idx] + step
                shifted[k] = nudged
                f_plus = _objective(fn, shifted, weights)
                nudged[idx] = base[idx] - step
                f_minus = _objective(fn, shifted, weights)
                numeric[idx] = (f_plus - f_minus) / (2 * step)
            worst = max(worst, relative_error(grad, numeric))
    return worst


# ═══════════════════════════════════════════════════════════════
# Op cases
# ═══════════════════════════════════════════════════════════════

@dataclass
class OpCase:
    """`build(rng)` returns (fn, input arrays) for one randomized instance."""
    name: str
    build: Callable


def _away_from_zero(rng, shape, low=0.1):
    return rng.choice((-1.0, 1.0), size=shape) * rng.uniform(low, 1.0, size=shape)


def _distinct(rng, shape):
    """Values at least 0.05 apart so a maximum never changes under the finite-difference step."""
    size = int(np.prod(shape))
    return (rng.permutation(size).astype(np.float64) * 0.05 - size * 0.025).reshape(shape)


def _dims(rng, low=1, high=4, count=2):
    return tuple(int(d) for d in rng.integers(low, high + 1, size=count))


def _case_add(rng):
    n, c = _dims(rng)
    return ops.add, [rng.standard_normal((n, c)), rng.standard_normal((c,))]


def _case_sub(rng):
    n, c = _dims(rng)
    return ops.sub, [rng.standard_normal((n, c)), rng.standard_normal((n, 1))]


def _case_mul(rng):
    n, c = _dims(rng)
    return ops.mul, [rng.standard_normal((n, c)), rng.standard_normal((1, c))]


def _case_where(rng):
    shape = _dims(rng)
    mask = rng.random(shape) < 0.5
    return (lambda a, b: ops.where(mask, a, b)), [rng.standard_normal(shape), rng.standard_normal(shape)]


def _case_relu(rng):
    return ops.relu, [_away_from_zero(rng, _dims(rng, count=3))]


def _case_sigmoid(rng):
    return ops.sigmoid, [rng.standard_normal(_dims(rng))]


def _case_tanh(rng):
    return ops.tanh, [rng.standard_normal(_dims(rng))]


def _case_reshape(rng):
    a, b, c = _dims(rng, count=3)
    return (lambda x: ops.reshape(x, (a * b, c))), [rng.standard_normal((a, b, c))]


def _case_transpose(rng):
    axes = tuple(int(i) for i in rng.permutation(3))
    return (lambda x: ops.transpose(x, axes)), [rng.standard_normal(_dims(rng, count=3))]


def _case_concat(rng):
    n, a, b = _dims(rng, count=3)
    return (lambda x, y: ops.concat([x, y], axis=1)), [rng.standard_normal((n, a)), rng.standard_normal((n, b))]


def _case_slice(rng):
    n, c = _dims(rng, low=2, high=5)
    start = int(rng.integers(0, c - 1))
    return (lambda x: ops.slice_axis(x, start, c, axis=1)), [rng.standard_normal((n, c))]


def _case_sum(rng):
    return (lambda x: ops.reduce_sum(x, axis=1)), [rng.standard_normal(_dims(rng, count=3))]


def _case_mean(rng):
    return (lambda x: ops.reduce_mean(x, axis=(0, 2))), [rng.standard_normal(_dims(rng, count=3))]


def _case_matmul(rng):
    n, t, i, o = _dims(rng, count=4)
    return ops.matmul, [rng.standard_normal((n, t, i)), rng.standard_normal((i, o))]


def _case_linear(rng):
    n, i, o = _dims(rng, count=3)
    return ops.linear, [rng.standard_normal((n, i)), rng.standard_normal((i, o)), rng.standard_normal((o,))]


def _case_embedding(rng):
    vocab, dim = _dims(rng, low=2, high=5)
    ids = rng.integers(0, vocab, size=_dims(rng))
    return (lambda table: ops.embedding_lookup(table, ids)), [rng.standard_normal((vocab, dim))]


def _case_conv2d(rng):
    n, c, o = _dims(rng, low=1, high=3, count=3)
    size = int(rng.integers(3, 7))
    k = int(rng.choice((1, 3)))
    stride = int(rng.choice((1, 2)))
    padding = k // 2
    return ((lambda x, w, b: ops.conv2d(x, w, b, stride=stride, padding=padding)),
            [rng.standard_normal((n, c, size, size)), rng.standard_normal((o, c, k, k)),
             rng.standard_normal((o,))])


def _case_batchnorm(rng):
    n, c = _dims(rng, low=2, high=3)
    h, w = _dims(rng, low=2, high=3)
    return ((lambda x, g, b: ops.batchnorm2d(x, g, b, mode='train')),
            [rng.standard_normal((n, c, h, w)) * 2 + 0.5, rng.standard_normal((c,)), rng.standard_normal((c,))])


def _case_batchnorm_affine_free(rng):
    n, c = _dims(rng, low=2, high=3)
    return (lambda x: ops.batchnorm2d(x, mode='train')), [rng.standard_normal((n, c, 3, 3))]


def _case_batchnorm_eval(rng):
    n, c = _dims(rng, low=1, high=3)
    store = {'bn.running_mean': rng.standard_normal(c), 'bn.running_var': rng.uniform(0.5, 2.0, c)}
    state = ops.BatchNormState(store, 'bn')
    return ((lambda x, g, b: ops.batchnorm2d(x, g, b, state=state, mode='eval')),
            [rng.standard_normal((n, c, 2, 2)), rng.standard_normal((c,)), rng.standard_normal((c,))])


def _case_film(rng):
    n, c = _dims(rng)
    return ops.film, [rng.standard_normal((n, c, 3, 3)), rng.standard_normal((n, c)), rng.standard_normal((n, c))]


def _case_max_pool(rng):
    n, c = _dims(rng)
    return ops.global_max_pool, [_distinct(rng, (n, c, 3, 3))]


def _case_avg_pool(rng):
    n, c = _dims(rng)
    return ops.global_avg_pool, [rng.standard_normal((n, c, 3, 2))]


def _case_coordinates(rng):
    n, c = _dims(rng)
    return ops.coordinate_maps, [rng.standard_normal((n, c, 3, 4))]


def _case_cross_entropy(rng):
    n = int(rng.integers(1, 6))
    labels = rng.integers(0, 2, size=n)
    return (lambda logits: ops.softmax_cross_entropy(logits, labels)), [rng.standard_normal((n, 2))]


def _case_softmax(rng):
    return ops.softmax, [rng.standard_normal(_dims(rng, low=2, high=4))]


def _case_attention(rng):
    n, l, c = _dims(rng, count=3)
    return ((lambda v, s: ops.softmax_attention_pool(v, s)[0]),
            [rng.standard_normal((n, l, c)), rng.standard_normal((n, l))])


def _case_gru(rng):
    n, e, h = _dims(rng, low=1, high=3, count=3)
    lengths = rng.integers(0, 3, size=n)
    lengths[0] = 2
    return ((lambda x, w_ih, w_hh, b_ih, b_hh: ops.gru_sequence(x, lengths, w_ih, w_hh, b_ih, b_hh)),
            [rng.standard_normal((n, 2, e)), rng.standard_normal((e, 3 * h)) * 0.5,
             rng.standard_normal((h, 3 * h)) * 0.5, rng.standard_normal((3 * h,)), rng.standard_normal((3 * h,))])


def _case_lstm(rng):
    n, e, h = _dims(rng, low=1, high=3, count=3)
    lengths = rng.integers(0, 3, size=n)
    lengths[0] = 2
    return ((lambda x, w_ih, w_hh, b: ops.lstm_sequence(x, lengths, w_ih, w_hh, b)),
            [rng.standard_normal((n, 2, e)), rng.standard_normal((e, 4 * h)) * 0.5,
             rng.standard_normal((h, 4 * h)) * 0.5, rng.standard_normal((4 * h,))])


CASES = (
    OpCase('add', _case_add),
    OpCase('sub', _case_sub),
    OpCase('mul', _case_mul),
    OpCase('where', _case_where),
    OpCase('relu', _case_relu),
    OpCase('sigmoid', _case_sigmoid),
    OpCase('tanh', _case_tanh),
    OpCase('reshape', _case_reshape),
    OpCase('transpose', _case_transpose),
    OpCase('concat', _case_concat),
    OpCase('slice_axis', _case_slice),
    OpCase('reduce_sum', _case_sum),
    OpCase('reduce_mean', _case_mean),
    OpCase('matmul', _case_matmul),
    OpCase('linear', _case_linear),
    OpCase('embedding_lookup', _case_embedding),
    OpCase('conv2d', _case_conv2d),
    OpCase('batchnorm2d', _case_batchnorm),
    OpCase('batchnorm2d_affine_free', _case_batchnorm_affine_free),
    OpCase('batchnorm2d_eval', _case_batchnorm_eval),
    OpCase('film', _case_film),
    OpCase('global_max_pool', _case_max_pool),
    OpCase('global_avg_pool', _case_avg_pool),
    OpCase('coordinate_maps', _case_coordinates),
    OpCase('softmax_cross_entropy', _case_cross_entropy),
    OpCase('softmax', _case_softmax),
    OpCase('softmax_attention_pool', _case_attention),
    OpCase('gru_sequence', _case_gru),
    OpCase('lstm_sequence', _case_lstm),
)


def run_suite(seeds=20, only=None, tolerance=TOLERANCE):
    """
    Check every op over `seeds` randomized instances. Returns one row per op:
    {'op', 'cases', 'max_rel_error', 'passed'}.
    """
    rows = []
    selected = [c for c in CASES if only is None or c.name in only]
    logger.info(f"═══ Gradcheck: {len(selected)} ops × {seeds} seeds (float64, h={STEP}) ═══")
    for case in selected:
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            fn, arrays = case.build(rng)
            worst = max(worst, check_gradients(fn, arrays, rng))
        passed = worst < tolerance
        rows.append({'op': case.name, 'cases': seeds, 'max_rel_error': worst, 'passed': passed})
        log = logger.info if passed else logger.error
        log(f"Gradcheck: {case.name:<26} max rel err {worst:.3e} {'ok' if passed else 'FAILED'}")
    return rows
