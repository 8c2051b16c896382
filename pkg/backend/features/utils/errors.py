"""
Error Types
Exception hierarchy shared by every gridgnn feature package
"""

from typing import Optional


class GridGnnError(Exception):
    """Base class for all gridgnn errors"""


class InputError(GridGnnError, ValueError):
    """
    Invalid user input: bad arguments, malformed files, out-of-range ids

    Args:
        message: Human readable description
        path: Offending file, if the error came from a file
        offset: Byte offset or line number inside ``path``
    """

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        if path is not None:
            location = f"{path}" if offset is None else f"{path}@{offset}"
            message = f"{location}: {message}"
        super().__init__(message)


class ContractViolation(GridGnnError, AssertionError):
    """Internal contract broken (shape mismatch, stale cache, mismatched buffers)"""


class CollectiveTimeoutError(ContractViolation):
    """A collective rendezvous did not complete in time"""


class CollectiveAbortedError(GridGnnError):
    """A peer rank failed while this rank waited in a collective"""
