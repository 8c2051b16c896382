"""
Configuration Package
Layered run settings for the gridgnn command line
"""

from .settings import DATASET_FILES, ENV_KEYS, build_run_config, dataset_paths, read_config_file

__all__ = [
    'DATASET_FILES',
    'ENV_KEYS',
    'build_run_config',
    'dataset_paths',
    'read_config_file',
]
