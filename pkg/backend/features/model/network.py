"""
GCN Network
Forward and backward passes of the sharded GCN on one rank

Every layer aggregates with the adjacency shard of its rotation plane,
projects with its weight shard, optionally normalises, and finishes with the
fused ReLU / dropout / residual pass. Output features of one layer already
sit on the next layer's input layout, so no data moves between layers except
the residual reshard.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import logging

import numpy as np

from ..comm.reshard import reshard
from ..graph.csr import CsrMatrix
from ..pmm.elementwise import ElementwiseCache, fused_elementwise_bwd, fused_elementwise_fwd
from ..pmm.layout import (
    INPUT_LAYOUT,
    EvenPartition,
    LayerPlan,
    RotationSchedule,
    RowPartition,
    ShardedTensor,
)
from ..pmm.operators import (
    RmsNormCache,
    gather_predictions,
    parallel_rmsnorm_fwd,
    rmsnorm_bwd,
    sharded_gemm,
    sharded_gemm_bwd,
    sharded_spmm,
    sharded_spmm_bwd,
)
from ..sampling.uniform import MiniBatch
from ..shardsample.local_minibatch import MiniBatchShard
from ..utils.errors import ContractViolation, InputError
from .config import ModelConfig
from .state import ModelState

logger = logging.getLogger(__name__)

MODES = ("train", "eval")


@dataclass(frozen=True, eq=False)
class RankBatch:
    """
    Everything one rank needs for a step

    ``adjacency`` maps each rotation plane to its (A_loc, A_loc^T) pair.
    ``x_in`` is the input-feature block for INPUT_LAYOUT, ``labels`` and
    ``row_vertices`` cover the logits' local rows.
    """

    adjacency: Dict[str, Tuple[CsrMatrix, CsrMatrix]]
    x_in: np.ndarray
    labels: np.ndarray
    row_vertices: np.ndarray
    rows: RowPartition
    step: int
    sample_ms: float = 0.0

    @classmethod
    def from_plane_shards(
        cls, shards: Mapping[str, MiniBatchShard], schedule: RotationSchedule, step: int, sample_ms: float = 0.0
    ) -> "RankBatch":
        """
        Input features come from the first layer's plane (its column side is
        the input row axis); labels from the last layer's plane
        """
        first = shards[schedule.layer(1).adjacency.plane]
        last = shards[schedule.layer(schedule.n_layers).adjacency.plane]
        return cls(
            adjacency={plane: (s.a_loc, s.a_t_loc) for plane, s in shards.items()},
            x_in=first.x_s,
            labels=last.y_s,
            row_vertices=last.s_r,
            rows=RowPartition(first.sample.vertices, first.sample.graph_size),
            step=step,
            sample_ms=sample_ms,
        )

    @classmethod
    def from_minibatch(
        cls, batch: MiniBatch, schedule: RotationSchedule, step: int, sample_ms: float = 0.0
    ) -> "RankBatch":
        """Serial batch on a 1x1x1 grid: every plane holds the whole matrix"""
        pair = (batch.adjacency, batch.adjacency_t)
        return cls(
            adjacency={plane: pair for plane in schedule.adjacency_layouts},
            x_in=batch.features,
            labels=batch.labels,
            row_vertices=batch.sample.vertices,
            rows=RowPartition(batch.sample.vertices, batch.sample.graph_size),
            step=step,
            sample_ms=sample_ms,
        )


@dataclass(frozen=True)
class ParallelContext:
    """Per-rank knobs shared by forward and backward"""

    groups: Mapping
    precision: str = "fp32"
    overlap: bool = False
    seed: int = 0
    dp_group: int = 0


@dataclass
class LayerCache:
    plan: LayerPlan
    f_in: ShardedTensor
    h: ShardedTensor
    w: ShardedTensor
    a_t_loc: CsrMatrix
    norm: Optional[RmsNormCache]
    elementwise: ElementwiseCache


@dataclass
class ForwardCache:
    """Activations saved by forward; valid for exactly one backward"""

    x0: ShardedTensor
    w_in: ShardedTensor
    layers: List[LayerCache]
    f_out: ShardedTensor
    w_out: ShardedTensor
    state_step: int
    consumed: bool = field(default=False)


def forward(
    batch: RankBatch, state: ModelState, config: ModelConfig, ctx: ParallelContext, mode: str = "train"
) -> Tuple[ShardedTensor, ForwardCache]:
    """
    Logits block for this rank plus the cache backward needs

    Args:
        batch: Local adjacency shards and feature/label blocks
        state: Parameter shards
        config: Architecture and layer toggles
        ctx: Groups, payload precision and the dropout key base
        mode: "train" applies dropout, "eval" does not

    Returns:
        (logits on the schedule's logits layout, forward cache)
    """
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}")
    training = mode == "train"
    schedule = RotationSchedule(config.n_layers)
    groups = ctx.groups
    rate = config.dropout if config.use_dropout else 0.0

    x0 = ShardedTensor.from_local(batch.x_in, INPUT_LAYOUT, batch.rows, EvenPartition(config.d_in), groups)
    w_in = state.tensor("w_in", groups)
    f = sharded_gemm(x0, w_in, groups, ctx.precision)

    layers = []
    for plan in schedule.layers:
        a_loc, a_t_loc = batch.adjacency[plan.adjacency.plane]
        h = sharded_spmm(a_loc, f, groups, ctx.precision)
        w = state.tensor(f"w_{plan.layer}", groups)
        z = sharded_gemm(h, w, groups, ctx.precision)
        norm = None
        if config.use_rmsnorm:
            z, norm = parallel_rmsnorm_fwd(z, state.params[f"gamma_{plan.layer}"], groups)
        residual = reshard(f, plan.features_out, groups) if config.use_residual else None
        mask_key = (ctx.seed, ctx.dp_group, batch.step, plan.layer)
        f_next, elementwise = fused_elementwise_fwd(z, residual, rate, mask_key, training)
        layers.append(LayerCache(plan, f, h, w, a_t_loc, norm, elementwise))
        f = f_next

    w_out = state.tensor("w_out", groups)
    logits = sharded_gemm(f, w_out, groups, ctx.precision)
    return logits, ForwardCache(x0, w_in, layers, f, w_out, state.step)


def backward(
    cache: Optional[ForwardCache], grad_logits: ShardedTensor, state: ModelState, ctx: ParallelContext
) -> Dict[str, np.ndarray]:
    """
    Gradient shards for every parameter, written into ``state.grads``

    Raises:
        ContractViolation: missing cache, cache already consumed, or the
            parameters changed since the forward pass
    """
    if cache is None:
        raise ContractViolation("backward called without a forward cache")
    if cache.consumed:
        raise ContractViolation("forward cache was already used by a backward pass")
    if cache.state_step != state.step:
        raise ContractViolation(
            f"stale forward cache: taken at optimizer step {cache.state_step}, parameters are at {state.step}"
        )
    groups, precision = ctx.groups, ctx.precision
    grads = {}

    grads["w_out"], grad_f = sharded_gemm_bwd(cache.f_out, cache.w_out, grad_logits, groups, precision, overlap=ctx.overlap)
    for layer in reversed(cache.layers):
        l = layer.plan.layer
        grad_z, grad_residual = fused_elementwise_bwd(grad_f, layer.elementwise)
        if layer.norm is not None:
            grad_z, grads[f"gamma_{l}"] = rmsnorm_bwd(grad_z, layer.norm, groups)
        grads[f"w_{l}"], grad_h = sharded_gemm_bwd(layer.h, layer.w, grad_z, groups, precision, overlap=ctx.overlap)
        grad_f = sharded_spmm_bwd(layer.a_t_loc, grad_h, groups, precision)
        if grad_residual is not None:
            back = reshard(grad_residual, layer.f_in.layout, groups)
            grad_f = grad_f.like(grad_f.local + back.local)

    grads["w_in"], _ = sharded_gemm_bwd(cache.x0, cache.w_in, grad_f, groups, precision, need_input_grad=False)
    cache.consumed = True
    state.set_grads(grads)
    return grads


def split_counts(logits: ShardedTensor, labels: np.ndarray, split: np.ndarray, groups: Mapping) -> np.ndarray:
    """
    (correct, total) per split tag over the whole batch

    Returns:
        int64 array of shape (2, 3): row 0 correct, row 1 totals, columns
        train/val/test
    """
    predictions = gather_predictions(logits, groups)
    counts = np.zeros((2, 3), dtype=np.int64)
    for tag in range(3):
        mask = split == tag
        counts[0, tag] = np.count_nonzero(predictions[mask] == labels[mask])
        counts[1, tag] = np.count_nonzero(mask)
    return groups[logits.layout.row_axis].all_reduce(counts, "fp32")
