"""
Optimizers and Gradient Synchronization
Data-parallel gradient averaging, SGD and Adam with bias correction
"""

from typing import Dict

import numpy as np

from ..utils.errors import InputError
from .state import ModelState

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def dp_sync(grads: Dict[str, np.ndarray], d_group) -> Dict[str, np.ndarray]:
    """Average gradients across the D-axis group; always full precision"""
    if d_group.size == 1:
        return grads
    return {name: d_group.all_reduce(grad, "fp32") / grad.dtype.type(d_group.size) for name, grad in grads.items()}


def optimizer_step(state: ModelState, lr: float, optimizer: str = "adam") -> ModelState:
    """
    Apply one update to every parameter shard in place

    SGD: w <- w - lr * g. Adam: bias-corrected moments with
    (beta1, beta2, eps) = (0.9, 0.999, 1e-8).
    """
    if optimizer not in ("adam", "sgd"):
        raise InputError(f"unknown optimizer {optimizer!r}")
    state.step += 1
    t = state.step
    for name, param in state.params.items():
        grad = state.grads[name]
        lr_t = param.dtype.type(lr)
        if optimizer == "sgd":
            param -= lr_t * grad
            continue
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= param.dtype.type(ADAM_BETA1)
        m += param.dtype.type(1.0 - ADAM_BETA1) * grad
        v *= param.dtype.type(ADAM_BETA2)
        v += param.dtype.type(1.0 - ADAM_BETA2) * grad * grad
        m_hat = m / param.dtype.type(1.0 - ADAM_BETA1 ** t)
        v_hat = v / param.dtype.type(1.0 - ADAM_BETA2 ** t)
        param -= lr_t * m_hat / (np.sqrt(v_hat) + param.dtype.type(ADAM_EPS))
    return state
