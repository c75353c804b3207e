"""
Adam Optimizer
Moments are kept per parameter name so the state can be checkpointed next to
the parameters it belongs to. Weight decay is L2: added to the gradient
before the moment updates.

Usage:
    from engine.optim import AdamState, adam_step

    state = AdamState(lr=3e-4)
    adam_step(model.params, grads_by_name, state)
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from errors import ShapeMismatch

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, optimizer_config):
        return cls(lr=optimizer_config['lr'], beta1=optimizer_config['beta1'],
                   beta2=optimizer_config['beta2'], eps=optimizer_config['eps'],
                   weight_decay=optimizer_config['weight_decay'])

    def hyperparameters(self):
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2,
                'eps': self.eps, 'weight_decay': self.weight_decay}

    def reset(self):
        """Fresh moments and step counter, same hyperparameters."""
        return AdamState(**self.hyperparameters())


def adam_step(params, grads, state):
    """
    One Adam update. `params` maps name → Tensor and is updated in place by
    rebinding each tensor's data; `grads` maps name → ndarray. Parameters
    without a gradient are treated as having a zero gradient.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name in sorted(params):
        param = params[name]
        grad = grads.get(name)
        grad = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=param.data.dtype)
        if grad.shape != param.shape:
            raise ShapeMismatch(f"adam_step: gradient {grad.shape} for parameter {name} {param.shape}")
        if state.weight_decay:
            grad = grad + state.weight_decay * param.data

        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m.astype(param.data.dtype)
        state.v[name] = v.astype(param.data.dtype)

        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = (param.data - update).astype(param.data.dtype)
