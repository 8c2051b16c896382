"""
Serial Reference
The same model math on a single device with identity groups: the oracle every
sharded path is checked against, plus finite-difference gradient checking
"""

from typing import Dict, List, Optional, Tuple

import logging

import numpy as np

from ..comm.collectives import local_groups
from ..comm.grid import DeviceGrid
from ..comm.partition import block_range
from ..comm.stats import CommStats
from ..graph.dataset import Dataset
from ..pmm.layout import RotationSchedule
from ..pmm.operators import parallel_cross_entropy
from ..sampling.uniform import SampleSet, build_minibatch, group_seed, slice_minibatch
from ..shardsample.local_minibatch import CsrShard, RemapTable, build_local_minibatch
from ..utils.seeding import generator, mix_seed
from .config import ModelConfig, RunConfig
from .network import ParallelContext, RankBatch, backward, forward, split_counts
from .optimizer import optimizer_step
from .state import ModelState
from .trainer import EpochRecord, TrainReport, TrainResult, accuracies, should_evaluate, steps_per_epoch

logger = logging.getLogger(__name__)

FD_STEP = 1e-5


class SerialModel:
    """Single-device trainer state: parameters, identity groups and the rotation schedule"""

    def __init__(self, dataset: Dataset, config: RunConfig, model_config: Optional[ModelConfig] = None):
        self.dataset = dataset
        self.config = config
        self.model_config = model_config or config.to_model_config(dataset.d_in, dataset.n_classes)
        self.schedule = RotationSchedule(self.model_config.n_layers)
        self.groups = local_groups()
        self.state = ModelState.initialize(self.model_config, config.seed, self.groups, dataset.features.dtype)

    def context(self, dp_group: int) -> ParallelContext:
        return ParallelContext(self.groups, "fp32", False, self.config.seed, dp_group)

    def batch(self, dp_group: int, step: int) -> RankBatch:
        minibatch = build_minibatch(
            self.dataset, self.config.batch_size, group_seed(self.config.seed, dp_group), step
        )
        return RankBatch.from_minibatch(minibatch, self.schedule, step)

    def loss(self, batch: RankBatch, dp_group: int) -> float:
        logits, _ = forward(batch, self.state, self.model_config, self.context(dp_group), "train")
        return parallel_cross_entropy(logits, batch.labels, self.groups).loss

    def group_gradients(self, dp_group: int, step: int) -> Tuple[Dict[str, np.ndarray], float]:
        """Pre-sync gradients of one DP group's batch at ``step``"""
        batch = self.batch(dp_group, step)
        ctx = self.context(dp_group)
        logits, cache = forward(batch, self.state, self.model_config, ctx, "train")
        result = parallel_cross_entropy(logits, batch.labels, self.groups)
        self.state.zero_grad()
        grads = backward(cache, result.grad, self.state, ctx)
        return {name: grad.copy() for name, grad in grads.items()}, result.loss

    def evaluate_full_graph(self) -> np.ndarray:
        batch = RankBatch.from_minibatch(slice_minibatch(self.dataset, SampleSet.full(self.dataset.n)), self.schedule, 0)
        logits, _ = forward(batch, self.state, self.model_config, self.context(0), "eval")
        return split_counts(logits, batch.labels, self.dataset.split[batch.row_vertices], self.groups)


def _average(per_group: List[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Sum in DP-group order then divide, as the D-axis all-reduce does"""
    if len(per_group) == 1:
        return per_group[0]
    out = {}
    for name, first in per_group[0].items():
        total = first.copy()
        for grads in per_group[1:]:
            total += grads[name]
        out[name] = total / total.dtype.type(len(per_group))
    return out


def reference_train(dataset: Dataset, config: RunConfig) -> TrainResult:
    """
    Serial replay of a grid run: each DP group's batch in turn, gradients
    averaged, then one optimizer step

    Returns:
        TrainResult whose report has zero communication and zero timings
    """
    dataset = dataset.astype(np.dtype(config.dtype))
    model = SerialModel(dataset, config)
    g_d = config.device_grid.g_d
    steps = steps_per_epoch(dataset.n, config.batch_size, g_d)
    records = []
    for epoch in range(1, config.epochs + 1):
        losses = []
        first = (epoch - 1) * steps
        for step in range(first, first + steps):
            per_group, step_losses = [], []
            for d in range(g_d):
                grads, loss = model.group_gradients(d, step)
                per_group.append(grads)
                step_losses.append(loss)
            model.state.set_grads(_average(per_group))
            optimizer_step(model.state, config.lr, config.optimizer)
            losses.append(step_losses)
        record = {"epoch": epoch, "step": epoch * steps, "loss": float(np.mean(np.mean(np.array(losses).T, axis=0)))}
        if should_evaluate(epoch, config):
            acc = accuracies(model.evaluate_full_graph())
            record.update(train_acc=acc["train"], val_acc=acc["val"], test_acc=acc["test"])
        records.append(EpochRecord(**record))
        logger.debug(f"reference epoch {epoch}: loss {record['loss']:.6f}")
    report = TrainReport(grid=config.grid, seed=config.seed, steps_per_epoch=steps, epochs=records, comm=CommStats())
    return TrainResult(report, {name: p.copy() for name, p in model.state.params.items()})


def reference_gradients(dataset: Dataset, config: RunConfig, step: int = 0) -> Dict[int, Dict[str, np.ndarray]]:
    """Per-DP-group pre-sync gradients from the initial weights"""
    dataset = dataset.astype(np.dtype(config.dtype))
    model = SerialModel(dataset, config)
    return {d: model.group_gradients(d, step)[0] for d in range(config.device_grid.g_d)}


def relative_error(numeric: np.ndarray, analytic: np.ndarray) -> float:
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
    return float(np.linalg.norm(numeric - analytic) / scale)


def gradient_check(
    dataset: Dataset,
    config: RunConfig,
    step: int = 0,
    max_entries: Optional[int] = 64,
    eps: float = FD_STEP,
) -> Dict[str, float]:
    """
    Central finite differences against backward, in float64

    Dropout masks are keyed by (seed, group, step, layer), so the perturbed
    losses see the same masks as the analytic pass.

    Args:
        dataset: Dataset (converted to float64 here)
        config: Run configuration (its dtype is ignored)
        step: Step whose batch is used
        max_entries: Entries checked per tensor, drawn at random; None checks all
        eps: Finite-difference step

    Returns:
        Relative error per parameter tensor
    """
    dataset = dataset.astype(np.float64)
    model = SerialModel(dataset, config.model_copy(update={"dtype": "float64"}))
    batch = model.batch(0, step)
    analytic, _ = model.group_gradients(0, step)
    rng = generator(mix_seed(config.seed, step, 0xFD))

    errors = {}
    for name, param in model.state.params.items():
        flat = param.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.zeros(entries.size)
        for k, index in enumerate(entries):
            original = flat[index]
            flat[index] = original + eps
            plus = model.loss(batch, 0)
            flat[index] = original - eps
            minus = model.loss(batch, 0)
            flat[index] = original
            numeric[k] = (plus - minus) / (2 * eps)
        errors[name] = relative_error(numeric, analytic[name].reshape(-1)[entries])
    logger.info(f"gradient check: max relative error {max(errors.values()):.3e}")
    return errors


def shard_oracle_error(
    dataset: Dataset, grid: DeviceGrid, batch_size: int, seed: int, steps: int, perturb: float = 0.0
) -> float:
    """
    Largest deviation between pasted-together per-rank shards and the serial
    induced, rescaled subgraph

    Every (row, col) split the grid's planes use is checked for ``steps``
    steps of DP group 0. ``perturb`` is added to one value of the first block.
    """
    n = dataset.n
    splits = sorted({(grid.axis_size(a), grid.axis_size(b)) for a in "XYZ" for b in "XYZ" if a != b})
    gseed = group_seed(seed, 0)
    worst = 0.0
    for step in range(steps):
        serial = build_minibatch(dataset, batch_size, gseed, step)
        expected = serial.adjacency.to_dense()
        for row_parts, col_parts in splits:
            pasted = np.zeros_like(expected)
            labels = np.full(batch_size, -1, dtype=serial.labels.dtype)
            for i in range(row_parts):
                for j in range(col_parts):
                    shard = CsrShard.from_global(
                        dataset.adjacency, *block_range(n, row_parts, i), *block_range(n, col_parts, j)
                    )
                    local = build_local_minibatch(shard, dataset, batch_size, gseed, step, RemapTable(n))
                    block = local.a_loc.to_dense()
                    if perturb and i == 0 and j == 0 and block.size:
                        block.flat[0] += perturb
                    r0, c0 = local.row_offset, local.col_offset
                    pasted[r0:r0 + block.shape[0], c0:c0 + block.shape[1]] = block
                    labels[r0:r0 + local.y_s.size] = local.y_s
            worst = max(worst, float(np.max(np.abs(pasted - expected), initial=0.0)))
            if not np.array_equal(labels, serial.labels):
                worst = float("inf")
    return worst
