"""
Sampling Module
Serial uniform vertex sampling and unbiased induced-subgraph construction
"""

from .uniform import (
    SampleSet,
    MiniBatch,
    SamplingReport,
    group_seed,
    inclusion_probability,
    sample_vertices,
    induce_subgraph,
    rescale_edges,
    slice_minibatch,
    build_minibatch,
    aggregation_bias,
)

__all__ = [
    'SampleSet',
    'MiniBatch',
    'SamplingReport',
    'group_seed',
    'inclusion_probability',
    'sample_vertices',
    'induce_subgraph',
    'rescale_edges',
    'slice_minibatch',
    'build_minibatch',
    'aggregation_bias',
]
