"""
bfloat16 Emulation
Bit-level round-to-nearest-even conversion of float32 payloads
"""

import numpy as np


def bf16_bits(values) -> np.ndarray:
    """
    Upper 16 bits of each float32 after round-to-nearest-even

    NaN stays NaN (quieted), infinities stay infinite.
    """
    f32 = np.asarray(values, dtype=np.float32)
    bits = f32.view(np.uint32).astype(np.uint64)
    lsb = (bits >> 16) & 1
    rounded = ((bits + 0x7FFF + lsb) >> 16) & 0xFFFF
    nan_bits = ((bits >> 16) | 0x0040) & 0xFFFF
    return np.where(np.isnan(f32), nan_bits, rounded).astype(np.uint16)


def bf16_to_float32(bits) -> np.ndarray:
    return (np.asarray(bits, dtype=np.uint16).astype(np.uint32) << 16).view(np.float32)


def bf16_round(values) -> np.ndarray:
    """Round to the nearest bfloat16 and widen back to float32"""
    return bf16_to_float32(bf16_bits(values))
