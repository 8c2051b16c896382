"""
PMM Module
3D parallel matrix multiplication: plane layouts, layer rotation and sharded operators
"""

from .elementwise import (
    ElementwiseCache,
    check_dropout_rate,
    dropout_keep_mask,
    fused_elementwise_bwd,
    fused_elementwise_fwd,
)
from .layout import (
    FEATURE_LAYOUT,
    INPUT_LAYOUT,
    INPUT_WEIGHT_LAYOUT,
    EvenPartition,
    LayerPlan,
    Layout,
    RotationSchedule,
    RowPartition,
    ShardedTensor,
    assemble,
    param_block,
    rotation_plane,
)
from .operators import (
    RMSNORM_EPS,
    CrossEntropyResult,
    RmsNormCache,
    gather_predictions,
    parallel_cross_entropy,
    parallel_rmsnorm_fwd,
    rmsnorm_bwd,
    sharded_gemm,
    sharded_gemm_bwd,
    sharded_spmm,
    sharded_spmm_bwd,
)

__all__ = [
    'ElementwiseCache',
    'check_dropout_rate',
    'dropout_keep_mask',
    'fused_elementwise_bwd',
    'fused_elementwise_fwd',
    'FEATURE_LAYOUT',
    'INPUT_LAYOUT',
    'INPUT_WEIGHT_LAYOUT',
    'EvenPartition',
    'LayerPlan',
    'Layout',
    'RotationSchedule',
    'RowPartition',
    'ShardedTensor',
    'assemble',
    'param_block',
    'rotation_plane',
    'RMSNORM_EPS',
    'CrossEntropyResult',
    'RmsNormCache',
    'gather_predictions',
    'parallel_cross_entropy',
    'parallel_rmsnorm_fwd',
    'rmsnorm_bwd',
    'sharded_gemm',
    'sharded_gemm_bwd',
    'sharded_spmm',
    'sharded_spmm_bwd',
]
