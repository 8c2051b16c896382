"""
Fused Element-wise Pass
ReLU, inverted dropout and the residual add in one pass, with mask replay for backward
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..utils.errors import ContractViolation, InputError
from ..utils.seeding import counter_stream
from .layout import ShardedTensor


def check_dropout_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")


def dropout_keep_mask(
    key: Sequence[int], global_shape: Tuple[int, int], rows: Tuple[int, int], cols: Tuple[int, int], rate: float
) -> np.ndarray:
    """
    This block of the global keep mask for one (seed, group, step, layer) key

    Every rank draws the full mask from the same counter-based stream and
    slices it, so replicas along any axis keep the same elements.
    """
    uniform = counter_stream(key).random(global_shape, dtype=np.float64)
    return uniform[rows[0]:rows[1], cols[0]:cols[1]] >= rate


@dataclass
class ElementwiseCache:
    active: np.ndarray
    keep: Optional[np.ndarray]
    scale: float
    residual: bool


def fused_elementwise_fwd(
    x: ShardedTensor,
    h_prev: Optional[ShardedTensor],
    dropout_rate: float,
    mask_key: Optional[Sequence[int]],
    training: bool,
) -> Tuple[ShardedTensor, ElementwiseCache]:
    """
    x_out = dropout(relu(x)) + h_prev

    ``h_prev`` must already sit on x's layout; pass None to skip the residual.
    Dropout is the identity when not training, when the rate is 0 or when
    ``mask_key`` is None.
    """
    check_dropout_rate(dropout_rate)
    if h_prev is not None and (h_prev.layout != x.layout or h_prev.local.shape != x.local.shape):
        raise ContractViolation(f"residual on {h_prev.layout} does not match activation on {x.layout}")

    active = x.local > 0
    out = np.where(active, x.local, 0).astype(x.local.dtype)
    keep = None
    scale = 1.0
    if training and dropout_rate > 0 and mask_key is not None:
        keep = dropout_keep_mask(mask_key, x.global_shape, x.row_range, x.col_range, dropout_rate)
        scale = 1.0 / (1.0 - dropout_rate)
        out = np.where(keep, out * out.dtype.type(scale), 0).astype(x.local.dtype)
    if h_prev is not None:
        out = out + h_prev.local
    return x.like(out), ElementwiseCache(active, keep, scale, h_prev is not None)


def fused_elementwise_bwd(
    grad_out: ShardedTensor, cache: Optional[ElementwiseCache]
) -> Tuple[ShardedTensor, Optional[ShardedTensor]]:
    """
    Replay the cached masks; the upstream gradient also flows unchanged
    into the residual branch

    Returns:
        (gradient before ReLU, gradient of the residual input or None)
    """
    if cache is None:
        raise ContractViolation("element-wise backward called without a forward cache")
    grad = grad_out.local
    if cache.keep is not None:
        grad = np.where(cache.keep, grad * grad.dtype.type(cache.scale), 0).astype(grad.dtype)
    grad = np.where(cache.active, grad, 0).astype(grad_out.local.dtype)
    residual = grad_out.like(grad_out.local.copy()) if cache.residual else None
    return grad_out.like(grad), residual
