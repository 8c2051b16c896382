"""
Block Partitioning
Contiguous, as-even-as-possible splits of a dimension across one grid axis
"""

from typing import List, Tuple


def block_range(size: int, parts: int, index: int) -> Tuple[int, int]:
    """
    Bounds of block ``index`` when ``size`` items are split into ``parts``

    The first ``size % parts`` blocks get one extra item.

    Returns:
        (start, end) half-open
    """
    base, extra = divmod(size, parts)
    start = index * base + min(index, extra)
    return start, start + base + (1 if index < extra else 0)


def block_bounds(size: int, parts: int) -> List[int]:
    """All boundaries: [0, end_0, end_1, ..., size]"""
    return [block_range(size, parts, i)[0] for i in range(parts)] + [size]
