"""
Shared utilities: errors, logging setup, seeding
"""

from .errors import (
    GridGnnError,
    InputError,
    ContractViolation,
    CollectiveTimeoutError,
    CollectiveAbortedError,
)

__all__ = [
    'GridGnnError',
    'InputError',
    'ContractViolation',
    'CollectiveTimeoutError',
    'CollectiveAbortedError',
]
