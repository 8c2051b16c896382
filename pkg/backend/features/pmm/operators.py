"""
3D Parallel Matrix Operators
Sharded SpMM and GEMM with axis all-reduces, parallel RMSNorm and parallel
cross-entropy, each with its backward counterpart
"""

from dataclasses import dataclass
from typing import Mapping, Optional, Tuple

import logging

import numpy as np

from ..graph.csr import CsrMatrix
from ..utils.errors import ContractViolation, InputError
from .layout import Layout, ShardedTensor

logger = logging.getLogger(__name__)

RMSNORM_EPS = 1e-6


def _reduce_pair(first_group, first, second_group, second, precision: str, overlap: bool):
    """Two all-reduces on orthogonal groups, optionally in flight together"""
    if overlap:
        f1 = first_group.all_reduce_async(first, precision)
        f2 = second_group.all_reduce_async(second, precision)
        return first_group.wait(f1), second_group.wait(f2)
    return first_group.all_reduce(first, precision), second_group.all_reduce(second, precision)


def sharded_spmm(a_loc: CsrMatrix, f: ShardedTensor, groups: Mapping, precision: str = "fp32") -> ShardedTensor:
    """
    H = AllReduce_r(A_loc @ F_loc)

    F sits on (r, c) and the adjacency shard on (t, r); H lands on (t, c),
    replicated along r.
    """
    if a_loc.n_cols != f.local.shape[0]:
        raise ContractViolation(f"spmm: adjacency shard {a_loc.shape} vs feature block {f.local.shape}")
    r, c = f.layout.row_axis, f.layout.col_axis
    partial = a_loc.spmm(f.local)
    out_layout = Layout(f.layout.third_axis, c)
    total = groups[r].all_reduce(partial, precision)
    return ShardedTensor.from_local(total, out_layout, f.rows, f.cols, groups)


def sharded_spmm_bwd(
    a_t_loc: CsrMatrix, grad_h: ShardedTensor, groups: Mapping, precision: str = "fp32"
) -> ShardedTensor:
    """
    dF = AllReduce_t(A_loc^T @ dH)

    dH sits on (t, c); the result lands back on the forward input layout (r, c).
    """
    if a_t_loc.n_cols != grad_h.local.shape[0]:
        raise ContractViolation(f"spmm bwd: transposed shard {a_t_loc.shape} vs gradient {grad_h.local.shape}")
    t, c = grad_h.layout.row_axis, grad_h.layout.col_axis
    r = next(a for a in ("X", "Y", "Z") if a not in (t, c))
    partial = a_t_loc.spmm(grad_h.local)
    total = groups[t].all_reduce(partial, precision)
    return ShardedTensor.from_local(total, Layout(r, c), grad_h.rows, grad_h.cols, groups)


def sharded_gemm(h: ShardedTensor, w: ShardedTensor, groups: Mapping, precision: str = "fp32") -> ShardedTensor:
    """
    Out = AllReduce_k(H_loc @ W_loc) where k is H's column axis and W's row axis

    H on (a, k) and W on (k, b) give Out on (a, b).
    """
    if h.layout.col_axis != w.layout.row_axis or h.local.shape[1] != w.local.shape[0]:
        raise ContractViolation(
            f"gemm: {h.layout} block {h.local.shape} cannot contract with {w.layout} block {w.local.shape}"
        )
    partial = h.local @ w.local
    total = groups[h.layout.col_axis].all_reduce(partial, precision)
    return ShardedTensor.from_local(total, Layout(h.layout.row_axis, w.layout.col_axis), h.rows, w.cols, groups)


def sharded_gemm_bwd(
    h: ShardedTensor,
    w: ShardedTensor,
    grad_out: ShardedTensor,
    groups: Mapping,
    precision: str = "fp32",
    need_input_grad: bool = True,
    overlap: bool = False,
) -> Tuple[np.ndarray, Optional[ShardedTensor]]:
    """
    dW = AllReduce_a(H^T dOut) and dH = AllReduce_b(dOut W^T)

    The two reductions run on orthogonal groups; with ``overlap`` they are
    issued together and the result does not depend on completion order.

    Returns:
        (local dW block, dH on H's layout or None)
    """
    if grad_out.local.shape != (h.local.shape[0], w.local.shape[1]):
        raise ContractViolation(f"gemm bwd: gradient block {grad_out.local.shape} does not match forward output")
    a, b = h.layout.row_axis, w.layout.col_axis
    partial_w = h.local.T @ grad_out.local
    if not need_input_grad:
        return groups[a].all_reduce(partial_w, precision), None
    partial_h = grad_out.local @ w.local.T
    grad_w, grad_h = _reduce_pair(groups[a], partial_w, groups[b], partial_h, precision, overlap)
    return grad_w, h.like(grad_h)


@dataclass
class RmsNormCache:
    x: np.ndarray
    rms: np.ndarray
    gamma: np.ndarray
    width: int


def parallel_rmsnorm_fwd(
    x: ShardedTensor, gamma_loc: np.ndarray, groups: Mapping, eps: float = RMSNORM_EPS
) -> Tuple[ShardedTensor, RmsNormCache]:
    """
    y = gamma * x / sqrt(mean(x^2) + eps) over each full row

    Rows are split across the column-axis group, so the sum of squares is
    all-reduced there, always at full precision.
    """
    if gamma_loc.shape != (x.local.shape[1],):
        raise ContractViolation(f"rmsnorm: gamma {gamma_loc.shape} vs block {x.local.shape}")
    width = x.cols.size
    sum_sq = np.sum(x.local * x.local, axis=1)
    sum_sq = groups[x.layout.col_axis].all_reduce(sum_sq, "fp32")
    rms = np.sqrt(sum_sq / width + eps).astype(x.local.dtype)
    y = gamma_loc * (x.local / rms[:, None])
    return x.like(y.astype(x.local.dtype)), RmsNormCache(x.local, rms, gamma_loc, width)


def rmsnorm_bwd(
    grad_y: ShardedTensor, cache: Optional[RmsNormCache], groups: Mapping
) -> Tuple[ShardedTensor, np.ndarray]:
    """
    dx = (gamma * dy - xhat * mean(gamma * dy * xhat)) / rms, dgamma = sum_rows(dy * xhat)

    The row mean is all-reduced over the column axis; dgamma over the row axis.
    """
    if cache is None:
        raise ContractViolation("rmsnorm backward called without a forward cache")
    xhat = cache.x / cache.rms[:, None]
    g_dy = cache.gamma * grad_y.local
    dot = np.sum(g_dy * xhat, axis=1)
    dot = groups[grad_y.layout.col_axis].all_reduce(dot, "fp32")
    grad_x = (g_dy - xhat * (dot / cache.width)[:, None]) / cache.rms[:, None]
    grad_gamma = groups[grad_y.layout.row_axis].all_reduce(np.sum(grad_y.local * xhat, axis=0), "fp32")
    return grad_y.like(grad_x.astype(grad_y.local.dtype)), grad_gamma


@dataclass
class CrossEntropyResult:
    loss: float
    grad: ShardedTensor
    correct: int


def parallel_cross_entropy(o: ShardedTensor, labels: np.ndarray, groups: Mapping) -> CrossEntropyResult:
    """
    Mean cross-entropy over the batch with classes split along the column axis

    Log-sum-exp uses an all-reduce max then an all-reduce sum over the class
    group, both at full precision; the loss sum is reduced over the row group.
    The gradient block is (softmax - onehot) / B.
    """
    class_group = groups[o.layout.col_axis]
    row_group = groups[o.layout.row_axis]
    logits = o.local
    n_rows = logits.shape[0]
    if labels.shape != (n_rows,):
        raise ContractViolation(f"cross entropy: {labels.shape[0]} labels for {n_rows} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= o.cols.size):
        raise InputError(f"label outside [0, {o.cols.size})")
    c0, c1 = o.col_range
    batch = o.rows.size

    local_max = logits.max(axis=1) if logits.shape[1] else np.full(n_rows, -np.inf, dtype=logits.dtype)
    row_max = class_group.all_reduce_max(local_max)
    shifted = np.exp(logits - row_max[:, None])
    sum_exp = class_group.all_reduce(shifted.sum(axis=1), "fp32")

    mine = (labels >= c0) & (labels < c1)
    picked = np.zeros(n_rows, dtype=logits.dtype)
    picked[mine] = logits[np.flatnonzero(mine), labels[mine] - c0]
    picked = class_group.all_reduce(picked, "fp32")

    per_row = row_max + np.log(sum_exp) - picked
    loss_sum = row_group.all_reduce(np.array([per_row.sum()], dtype=logits.dtype), "fp32")
    loss = float(loss_sum[0]) / batch

    grad = shifted / sum_exp[:, None]
    grad[np.flatnonzero(mine), labels[mine] - c0] -= 1.0
    grad /= batch

    hits = row_group.all_reduce(np.array([np.sum(picked >= row_max)], dtype=np.int64), "fp32")
    return CrossEntropyResult(loss, o.like(grad.astype(logits.dtype)), int(hits[0]))


def gather_predictions(o: ShardedTensor, groups: Mapping) -> np.ndarray:
    """Argmax class per local row after gathering every class block"""
    full = groups[o.layout.col_axis].all_gather(o.local, axis=1)
    return np.argmax(full, axis=1)
