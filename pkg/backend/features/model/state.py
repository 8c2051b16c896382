"""
Model State
Parameter layout per shard, global initialisation and per-rank parameter,
gradient and optimizer-moment storage
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import logging

import numpy as np

from ..pmm.layout import INPUT_WEIGHT_LAYOUT, EvenPartition, Layout, RotationSchedule, ShardedTensor, param_block
from ..utils.errors import ContractViolation
from ..utils.seeding import generator, mix_seed
from .config import ModelConfig

logger = logging.getLogger(__name__)

_INIT_STREAM = 0x1417


@dataclass(frozen=True)
class ParamSpec:
    """
    Shape and placement of one parameter

    Matrices are split by ``layout``; vectors (RMSNorm scales) along ``axis``
    and replicated across the other two axes.
    """

    name: str
    shape: Tuple[int, ...]
    layout: Optional[Layout] = None
    axis: Optional[str] = None

    def block(self, groups: Mapping) -> Tuple[slice, ...]:
        return param_block(self.shape, self.layout, self.axis, groups)

    def tensor(self, local: np.ndarray, groups: Mapping) -> ShardedTensor:
        return ShardedTensor.from_local(
            local, self.layout, EvenPartition(self.shape[0]), EvenPartition(self.shape[1]), groups
        )


def param_specs(config: ModelConfig) -> List[ParamSpec]:
    """Parameters in initialisation order: W_in, (W_l, gamma_l) per layer, W_out"""
    schedule = RotationSchedule(config.n_layers)
    d_h = config.d_hidden
    specs = [ParamSpec("w_in", (config.d_in, d_h), INPUT_WEIGHT_LAYOUT)]
    for plan in schedule.layers:
        specs.append(ParamSpec(f"w_{plan.layer}", (d_h, d_h), plan.weight))
        if config.use_rmsnorm:
            specs.append(ParamSpec(f"gamma_{plan.layer}", (d_h,), axis=plan.features_out.col_axis))
    specs.append(ParamSpec("w_out", (d_h, config.d_out), schedule.head_weight))
    return specs


def init_global_params(config: ModelConfig, seed: int, dtype=np.float32) -> Dict[str, np.ndarray]:
    """
    Full, unsharded initial parameters

    Matrices are Glorot-uniform in +-sqrt(6 / (fan_in + fan_out)) drawn from
    one seeded stream in parameter order; RMSNorm scales start at 1. Every grid
    slices the same global values.
    """
    rng = generator(mix_seed(seed, _INIT_STREAM))
    params = {}
    for spec in param_specs(config):
        if len(spec.shape) == 1:
            params[spec.name] = np.ones(spec.shape, dtype=dtype)
            continue
        bound = np.sqrt(6.0 / (spec.shape[0] + spec.shape[1]))
        params[spec.name] = rng.uniform(-bound, bound, size=spec.shape).astype(dtype)
    return params


@dataclass
class ModelState:
    """One rank's parameter shards, gradient shards and Adam moments"""

    specs: Dict[str, ParamSpec]
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray] = field(default_factory=dict)
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int, groups: Mapping, dtype=np.float32) -> "ModelState":
        full = init_global_params(config, seed, dtype)
        specs = {spec.name: spec for spec in param_specs(config)}
        params = {name: np.ascontiguousarray(full[name][spec.block(groups)]) for name, spec in specs.items()}
        state = cls(specs, params)
        state.zero_grad()
        state.first_moment = {name: np.zeros_like(p) for name, p in params.items()}
        state.second_moment = {name: np.zeros_like(p) for name, p in params.items()}
        return state

    def zero_grad(self) -> None:
        self.grads = {name: np.zeros_like(p) for name, p in self.params.items()}

    def tensor(self, name: str, groups: Mapping) -> ShardedTensor:
        return self.specs[name].tensor(self.params[name], groups)

    def set_grads(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            if grad.shape != self.params[name].shape:
                raise ContractViolation(f"gradient for {name} has shape {grad.shape}, shard is {self.params[name].shape}")
            self.grads[name] = grad

    @property
    def names(self) -> List[str]:
        return list(self.specs)


def assemble_params(
    shards: List[Tuple[Mapping[str, np.ndarray], Mapping]], specs: Mapping[str, ParamSpec], dtype=None
) -> Dict[str, np.ndarray]:
    """
    Global parameters (or gradients) from (per-rank arrays, per-rank groups)
    pairs of one data-parallel group
    """
    full = {}
    for name, spec in specs.items():
        first = shards[0][0][name]
        out = np.zeros(spec.shape, dtype=dtype or first.dtype)
        for arrays, groups in shards:
            out[spec.block(groups)] = arrays[name]
        full[name] = out
    return full
