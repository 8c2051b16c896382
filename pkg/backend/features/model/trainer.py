"""
Grid Trainer
Data-parallel, 3D-sharded mini-batch training on the virtual device grid
"""

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import logging

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from ..comm.collectives import Communicator, RankComm
from ..comm.partition import block_range
from ..comm.runtime import run_ranks
from ..comm.stats import CommStats
from ..graph.csr import CsrMatrix
from ..graph.dataset import Dataset, Split
from ..pmm.layout import INPUT_LAYOUT, EvenPartition, RotationSchedule
from ..pmm.operators import parallel_cross_entropy
from ..sampling.uniform import group_seed
from ..shardsample.local_minibatch import CsrShard, RemapTable, build_plane_shards, full_graph_sample
from .config import ModelConfig, RunConfig
from .network import ParallelContext, RankBatch, backward, forward, split_counts
from .optimizer import dp_sync, optimizer_step
from .prefetch import Prefetcher
from .state import ModelState, assemble_params, param_specs

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "epoch",
    "step",
    "loss",
    "train_acc",
    "val_acc",
    "test_acc",
    "t_sample_ms",
    "t_fwd_ms",
    "t_bwd_ms",
    "t_dpsync_ms",
    "bytes_x",
    "bytes_y",
    "bytes_z",
    "bytes_d",
]
TIMING_COLUMNS = ["t_sample_ms", "t_fwd_ms", "t_bwd_ms", "t_dpsync_ms"]
_TIMERS = ("sample", "fwd", "bwd", "dpsync")


class EpochRecord(BaseModel):
    """One metrics CSV row"""

    epoch: int = Field(..., description="Epoch number, from 1")
    step: int = Field(..., description="Optimizer steps completed so far")
    loss: float = Field(..., description="Mean training loss over the epoch's steps and DP groups")
    train_acc: float = Field(float("nan"), description="Full-graph train accuracy (NaN if not evaluated)")
    val_acc: float = Field(float("nan"), description="Full-graph validation accuracy")
    test_acc: float = Field(float("nan"), description="Full-graph test accuracy")
    t_sample_ms: float = Field(0.0, description="Batch construction time, slowest rank")
    t_fwd_ms: float = Field(0.0, description="Forward and loss time, slowest rank")
    t_bwd_ms: float = Field(0.0, description="Backward time, slowest rank")
    t_dpsync_ms: float = Field(0.0, description="Gradient sync and update time, slowest rank")
    bytes_x: float = Field(0.0, description="Bytes on X-axis groups this epoch, all ranks")
    bytes_y: float = Field(0.0, description="Bytes on Y-axis groups this epoch, all ranks")
    bytes_z: float = Field(0.0, description="Bytes on Z-axis groups this epoch, all ranks")
    bytes_d: float = Field(0.0, description="Bytes on D-axis groups this epoch, all ranks")


class TrainReport(BaseModel):
    """Per-epoch metrics plus the run's cumulative communication counters"""

    grid: str = Field(..., description="Grid the run used")
    seed: int = Field(..., description="Run seed")
    steps_per_epoch: int = Field(..., description="ceil(N / (B * G_d))")
    epochs: List[EpochRecord] = Field(default_factory=list, description="One record per epoch")
    comm: CommStats = Field(default_factory=CommStats, description="Cumulative communication counters")
    phase_ms: Dict[str, float] = Field(default_factory=dict, description="Summed slowest-rank time per phase")

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss if self.epochs else float("nan")

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([record.model_dump() for record in self.epochs], columns=CSV_COLUMNS)

    def write_csv(self, path) -> None:
        self.frame().to_csv(path, index=False)


@dataclass
class TrainResult:
    report: TrainReport
    params: Dict[str, np.ndarray]


def steps_per_epoch(n: int, batch_size: int, g_d: int) -> int:
    """Enough steps that all DP groups together draw about N vertices"""
    return math.ceil(n / (batch_size * g_d))


def should_evaluate(epoch: int, config: RunConfig) -> bool:
    return epoch % config.eval_every == 0 or epoch == config.epochs


def accuracies(counts: np.ndarray) -> Dict[str, float]:
    """(2, 3) correct/total counts to per-split accuracy; NaN for an empty split"""
    out = {}
    for tag in (Split.TRAIN, Split.VAL, Split.TEST):
        total = counts[1, tag]
        out[tag.name.lower()] = float(counts[0, tag] / total) if total else float("nan")
    return out


def rank_adjacency_shards(adjacency: CsrMatrix, schedule: RotationSchedule, groups: Mapping) -> Dict[str, CsrShard]:
    """This rank's 2D block of the normalized adjacency on every plane the model uses"""
    n = adjacency.n_rows
    shards = {}
    for plane, layout in schedule.adjacency_layouts.items():
        rows, cols = groups[layout.row_axis], groups[layout.col_axis]
        r0, r1 = block_range(n, rows.size, rows.index)
        c0, c1 = block_range(n, cols.size, cols.index)
        shards[plane] = CsrShard.from_global(adjacency, r0, r1, c0, c1)
    return shards


class BatchBuilder:
    """
    Per-rank batch construction for any step

    Args:
        dataset: Shared read-only dataset
        shards: Adjacency shards keyed by plane
        schedule: Rotation schedule of the model
        groups: This rank's axis groups
        batch_size: B
        seed: Group seed
        perturb: Added to one adjacency value on the first PMM rank (verification hook)
    """

    def __init__(
        self,
        dataset: Dataset,
        shards: Dict[str, CsrShard],
        schedule: RotationSchedule,
        groups: Mapping,
        batch_size: int,
        seed: int,
        perturb: float = 0.0,
    ):
        self.dataset = dataset
        self.shards = shards
        self.schedule = schedule
        self.batch_size = batch_size
        self.seed = seed
        self.remap = RemapTable(dataset.n)
        z = groups[INPUT_LAYOUT.col_axis]
        self.feature_cols = EvenPartition(dataset.d_in).range(z.size, z.index)
        self.perturb = perturb if all(groups[a].index == 0 for a in ("X", "Y", "Z")) else 0.0

    def build(self, step: int) -> RankBatch:
        start = time.perf_counter()
        shards = build_plane_shards(
            self.shards, self.dataset, self.batch_size, self.seed, step, self.remap, self.feature_cols
        )
        batch = RankBatch.from_plane_shards(shards, self.schedule, step)
        elapsed = (time.perf_counter() - start) * 1000.0
        if self.perturb:
            batch = _perturbed(batch, self.schedule.layer(1).adjacency.plane, self.perturb)
        return RankBatch(batch.adjacency, batch.x_in, batch.labels, batch.row_vertices, batch.rows, step, elapsed)

    def build_full_graph(self) -> RankBatch:
        """All N vertices, unscaled; uses its own remap table"""
        shards = build_plane_shards(
            self.shards,
            self.dataset,
            self.dataset.n,
            self.seed,
            0,
            RemapTable(self.dataset.n),
            self.feature_cols,
            sample=full_graph_sample(self.dataset.n),
        )
        return RankBatch.from_plane_shards(shards, self.schedule, 0)


def _perturbed(batch: RankBatch, plane: str, amount: float) -> RankBatch:
    a_loc, a_t_loc = batch.adjacency[plane]
    if a_loc.nnz == 0:
        return batch
    values = a_loc.values.copy()
    values[0] += values.dtype.type(amount)
    adjacency = dict(batch.adjacency)
    adjacency[plane] = (CsrMatrix(a_loc.n_rows, a_loc.n_cols, a_loc.row_ptr, a_loc.col_idx, values), a_t_loc)
    return RankBatch(adjacency, batch.x_in, batch.labels, batch.row_vertices, batch.rows, batch.step, batch.sample_ms)


@dataclass
class EpochStats:
    """One rank's contribution to an epoch record"""

    losses: List[float]
    timings: Dict[str, float]
    bytes_by_axis: Dict[str, float]
    counts: Optional[np.ndarray] = None


@dataclass
class RankOutcome:
    rank: int
    coord: object
    groups: Mapping
    params: Dict[str, np.ndarray]
    epochs: List[EpochStats] = field(default_factory=list)


class RankTrainer:
    """
    Training loop of one virtual rank

    Args:
        rank_comm: This rank's communicator view
        dataset: Shared read-only dataset, already in the compute dtype
        config: Run configuration
        model_config: Architecture
        perturb: Verification hook, see BatchBuilder
    """

    def __init__(
        self,
        rank_comm: RankComm,
        dataset: Dataset,
        config: RunConfig,
        model_config: ModelConfig,
        perturb: float = 0.0,
    ):
        self.rc = rank_comm
        self.dataset = dataset
        self.config = config
        self.model_config = model_config
        self.groups = rank_comm.groups()
        self.schedule = RotationSchedule(model_config.n_layers)
        d = rank_comm.coord.d
        self.ctx = ParallelContext(self.groups, config.precision, config.overlap, config.seed, d)
        self.state = ModelState.initialize(model_config, config.seed, self.groups, np.dtype(config.dtype))
        shards = rank_adjacency_shards(dataset.adjacency, self.schedule, self.groups)
        self.builder = BatchBuilder(
            dataset, shards, self.schedule, self.groups, config.batch_size, group_seed(config.seed, d), perturb
        )
        self.steps = steps_per_epoch(dataset.n, config.batch_size, config.device_grid.g_d)
        self._eval_batch: Optional[RankBatch] = None
        self._prefetcher: Optional[Prefetcher] = None

    def run(self) -> RankOutcome:
        outcome = RankOutcome(self.rc.rank, self.rc.coord, self.groups, self.state.params)
        if self.config.prefetch:
            total = self.steps * self.config.epochs
            self._prefetcher = Prefetcher(
                self.builder.build, range(total), name=f"rank-{self.rc.rank}", timeout=self.config.collective_timeout
            )
        try:
            for epoch in range(1, self.config.epochs + 1):
                stats = self.train_epoch(epoch)
                if should_evaluate(epoch, self.config):
                    stats.counts = self.evaluate_full_graph()
                outcome.epochs.append(stats)
        finally:
            if self._prefetcher is not None:
                self._prefetcher.close()
        return outcome

    def next_batch(self, step: int) -> RankBatch:
        if self._prefetcher is not None:
            return self._prefetcher.get(step)
        with self.rc.phase("sampling"):
            return self.builder.build(step)

    def train_step(self, batch: RankBatch) -> Tuple[float, Dict[str, float]]:
        """forward, loss, backward, dp_sync and the optimizer update"""
        timings = {}
        start = time.perf_counter()
        with self.rc.phase("forward"):
            logits, cache = forward(batch, self.state, self.model_config, self.ctx, "train")
            result = parallel_cross_entropy(logits, batch.labels, self.groups)
        mark = time.perf_counter()
        timings["fwd"] = (mark - start) * 1000.0

        with self.rc.phase("backward"):
            self.state.zero_grad()
            backward(cache, result.grad, self.state, self.ctx)
        start, mark = mark, time.perf_counter()
        timings["bwd"] = (mark - start) * 1000.0

        with self.rc.phase("dp_sync"):
            self.state.set_grads(dp_sync(self.state.grads, self.groups["D"]))
            optimizer_step(self.state, self.config.lr, self.config.optimizer)
        timings["dpsync"] = (time.perf_counter() - mark) * 1000.0
        return result.loss, timings

    def train_epoch(self, epoch: int) -> EpochStats:
        """S = ceil(N / (B * G_d)) steps; global step numbers continue across epochs"""
        before = self.rc.comm.recorder.rank_bytes(self.rc.rank)
        timings = {name: 0.0 for name in _TIMERS}
        losses = []
        first = (epoch - 1) * self.steps
        for step in range(first, first + self.steps):
            batch = self.next_batch(step)
            timings["sample"] += batch.sample_ms
            loss, step_timings = self.train_step(batch)
            for name, value in step_timings.items():
                timings[name] += value
            losses.append(loss)
            logger.debug(f"epoch {epoch} step {step}: loss {loss:.6f}")
        after = self.rc.comm.recorder.rank_bytes(self.rc.rank)
        return EpochStats(losses, timings, {axis: after[axis] - before[axis] for axis in after})

    def evaluate_full_graph(self) -> np.ndarray:
        """One dropout-free forward over every vertex; (correct, total) per split"""
        with self.rc.phase("eval"):
            if self._eval_batch is None:
                self._eval_batch = self.builder.build_full_graph()
            batch = self._eval_batch
            logits, _ = forward(batch, self.state, self.model_config, self.ctx, "eval")
            return split_counts(logits, batch.labels, self.dataset.split[batch.row_vertices], self.groups)


def _is_group_root(coord) -> bool:
    return coord.x == 0 and coord.y == 0 and coord.z == 0


def _epoch_record(epoch: int, step: int, stats: List[EpochStats], roots: List[EpochStats]) -> EpochRecord:
    per_step = np.mean([s.losses for s in roots], axis=0)
    record = {
        "epoch": epoch,
        "step": step,
        "loss": float(np.mean(per_step)),
        "t_sample_ms": max(s.timings["sample"] for s in stats),
        "t_fwd_ms": max(s.timings["fwd"] for s in stats),
        "t_bwd_ms": max(s.timings["bwd"] for s in stats),
        "t_dpsync_ms": max(s.timings["dpsync"] for s in stats),
    }
    for axis in ("X", "Y", "Z", "D"):
        record[f"bytes_{axis.lower()}"] = float(sum(s.bytes_by_axis[axis] for s in stats))
    counts = roots[0].counts
    if counts is not None:
        acc = accuracies(counts)
        record.update(train_acc=acc["train"], val_acc=acc["val"], test_acc=acc["test"])
    return EpochRecord(**record)


def build_report(config: RunConfig, steps: int, outcomes: List[RankOutcome], comm_stats: CommStats) -> TrainReport:
    roots = [o for o in outcomes if _is_group_root(o.coord)]
    records = []
    for index in range(config.epochs):
        epoch = index + 1
        records.append(
            _epoch_record(epoch, epoch * steps, [o.epochs[index] for o in outcomes], [o.epochs[index] for o in roots])
        )
    phase_ms = {name: sum(getattr(r, f"t_{name}_ms") for r in records) for name in _TIMERS}
    return TrainReport(
        grid=config.grid, seed=config.seed, steps_per_epoch=steps, epochs=records, comm=comm_stats, phase_ms=phase_ms
    )


def global_params(outcomes: List[RankOutcome], specs: Mapping, dp_group: int = 0) -> Dict[str, np.ndarray]:
    """Paste one DP group's parameter shards back into full matrices"""
    shards = [(o.params, o.groups) for o in outcomes if o.coord.d == dp_group]
    return assemble_params(shards, specs)


def make_communicator(config: RunConfig) -> Communicator:
    return Communicator(config.device_grid, timeout=config.collective_timeout, threads=config.threads)


def train(dataset: Dataset, config: RunConfig, perturb: float = 0.0) -> TrainResult:
    """
    Train on the configured grid

    Args:
        dataset: Dataset (converted to the configured dtype here)
        config: Run configuration
        perturb: Verification hook; 0 for real runs

    Returns:
        TrainResult with the report and DP group 0's final global parameters
    """
    dataset = dataset.astype(np.dtype(config.dtype))
    model_config = config.to_model_config(dataset.d_in, dataset.n_classes)
    comm = make_communicator(config)
    steps = steps_per_epoch(dataset.n, config.batch_size, config.device_grid.g_d)
    logger.info(
        f"Training on grid {config.grid}: {dataset.n} vertices, B={config.batch_size}, "
        f"{config.epochs} epochs x {steps} steps, precision {config.precision}"
    )

    def rank_main(rank_comm: RankComm) -> RankOutcome:
        return RankTrainer(rank_comm, dataset, config, model_config, perturb).run()

    outcomes = run_ranks(comm, rank_main)
    report = build_report(config, steps, outcomes, comm.stats())
    specs = {spec.name: spec for spec in param_specs(model_config)}
    for record in report.epochs:
        logger.info(f"epoch {record.epoch}: loss {record.loss:.4f} val_acc {record.val_acc:.4f}")
    return TrainResult(report, global_params(outcomes, specs))


def compute_gradients(
    dataset: Dataset, config: RunConfig, step: int = 0, perturb: float = 0.0
) -> Dict[int, Dict[str, np.ndarray]]:
    """
    Pre-sync global gradients of every DP group for one step from the initial weights

    Returns:
        {dp_group: {param name: full gradient}}
    """
    dataset = dataset.astype(np.dtype(config.dtype))
    model_config = config.to_model_config(dataset.d_in, dataset.n_classes)
    comm = make_communicator(config)

    def rank_main(rank_comm: RankComm):
        trainer = RankTrainer(rank_comm, dataset, config, model_config, perturb)
        batch = trainer.builder.build(step)
        with rank_comm.phase("forward"):
            logits, cache = forward(batch, trainer.state, model_config, trainer.ctx, "train")
            result = parallel_cross_entropy(logits, batch.labels, trainer.groups)
        with rank_comm.phase("backward"):
            backward(cache, result.grad, trainer.state, trainer.ctx)
        return RankOutcome(rank_comm.rank, rank_comm.coord, trainer.groups, trainer.state.grads), trainer.state.specs

    results = run_ranks(comm, rank_main)
    outcomes = [outcome for outcome, _ in results]
    specs = results[0][1]
    return {d: global_params(outcomes, specs, d) for d in range(config.device_grid.g_d)}
