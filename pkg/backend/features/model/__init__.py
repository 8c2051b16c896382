"""
Model Module
Sharded GCN assembly, data-parallel training loop, optimizers and the serial reference
"""

from .config import ModelConfig, RunConfig, SyntheticParams
from .network import ForwardCache, ParallelContext, RankBatch, backward, forward, split_counts
from .optimizer import dp_sync, optimizer_step
from .prefetch import Prefetcher
from .reference import (
    SerialModel,
    gradient_check,
    reference_gradients,
    reference_train,
    relative_error,
    shard_oracle_error,
)
from .state import ModelState, ParamSpec, assemble_params, init_global_params, param_specs
from .trainer import (
    CSV_COLUMNS,
    TIMING_COLUMNS,
    BatchBuilder,
    EpochRecord,
    RankTrainer,
    TrainReport,
    TrainResult,
    compute_gradients,
    rank_adjacency_shards,
    steps_per_epoch,
    train,
)

__all__ = [
    'ModelConfig',
    'RunConfig',
    'SyntheticParams',
    'ForwardCache',
    'ParallelContext',
    'RankBatch',
    'backward',
    'forward',
    'split_counts',
    'dp_sync',
    'optimizer_step',
    'Prefetcher',
    'SerialModel',
    'gradient_check',
    'reference_gradients',
    'reference_train',
    'relative_error',
    'shard_oracle_error',
    'ModelState',
    'ParamSpec',
    'assemble_params',
    'init_global_params',
    'param_specs',
    'CSV_COLUMNS',
    'TIMING_COLUMNS',
    'BatchBuilder',
    'EpochRecord',
    'RankTrainer',
    'TrainReport',
    'TrainResult',
    'compute_gradients',
    'rank_adjacency_shards',
    'steps_per_epoch',
    'train',
]
