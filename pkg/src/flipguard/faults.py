"""Bernoulli bit-flip fault model.

Each stored bit flips independently with probability ``ber``; a mask
records the flip events for one weight and is applied by XOR.  The
exponent-MSB protection assumption forces bit 2 of floating-point
patterns to never flip (it is a no-op for q2.5).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .formats import (
    BitPattern,
    DataTypeSpec,
    _BitVector,
    decode,
    decode_array,
    encode,
    encode_array,
)


class Protection(enum.Enum):
    NONE = "none"
    EXPONENT_MSB = "exp-msb"


# 1-based index of the floating-point exponent MSB (bit 1 is the sign).
PROTECTED_BIT_INDEX = 2


class BitFlipMask(_BitVector):
    """Flip events for one stored weight: bit 1 means "flip"."""


@dataclass(frozen=True)
class FaultConfig:
    """Fault-injection parameters for one experiment."""

    ber: float
    protection: Protection = Protection.NONE
    seed: int = 0
    rounds: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"ber must be in [0, 1], got {self.ber}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


def _protection_active(spec: DataTypeSpec, protection: Protection) -> bool:
    # The assumption only concerns the floating-point exponent MSB.
    return protection is Protection.EXPONENT_MSB and spec.is_float


def sample_mask_words(
    spec: DataTypeSpec,
    ber: float,
    protection: Protection,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``count`` independent masks as packed words.

    Bits are drawn in index order 1..width for each mask in turn, so the
    sequence of masks is identical to repeated :func:`sample_mask` calls
    on the same stream.  The protected bit is drawn and then forced to
    zero, keeping stream consumption independent of the protection flag.
    """
    if not 0.0 <= ber <= 1.0:
        raise ValueError(f"ber must be in [0, 1], got {ber}")
    width = spec.total_bits
    bits = rng.random((count, width)) < ber
    words = np.zeros(count, dtype=np.uint64)
    for col in range(width):
        words |= bits[:, col].astype(np.uint64) << np.uint64(width - 1 - col)
    if _protection_active(spec, protection):
        words &= np.uint64(~(1 << (width - PROTECTED_BIT_INDEX)) & ((1 << width) - 1))
    return words.astype(spec.word_dtype)


def sample_mask(
    spec: DataTypeSpec, cfg: FaultConfig, rng: np.random.Generator
) -> BitFlipMask:
    """Draw one mask; deterministic given the generator state."""
    word = int(sample_mask_words(spec, cfg.ber, cfg.protection, 1, rng)[0])
    return BitFlipMask(spec.total_bits, word)


def inject(pattern: BitPattern, mask: BitFlipMask) -> BitPattern:
    """Apply a mask to a pattern (bitwise XOR)."""
    if pattern.width != mask.width:
        raise ValueError(
            f"width mismatch: pattern {pattern.width} vs mask {mask.width}"
        )
    return BitPattern(pattern.width, pattern.word ^ mask.word)


def inject_words(words: np.ndarray, mask_words: np.ndarray) -> np.ndarray:
    """Vectorized XOR injection over packed words."""
    if words.dtype != mask_words.dtype:
        raise ValueError("width mismatch: word dtypes differ")
    return words ^ mask_words


def flip_error(
    value: float,
    mask: BitFlipMask,
    spec: DataTypeSpec,
    overflow: str = "saturate",
) -> float:
    """Signed error between a value and its post-flip decoded form.

    Returns ``value - decode(encode(value) XOR mask)``; may be +/-Inf or
    NaN for floating formats, which is propagated unchanged.
    """
    return value - decode(inject(encode(value, spec, overflow), mask), spec)


def flip_errors(
    value: float,
    mask_words: np.ndarray,
    spec: DataTypeSpec,
    overflow: str = "saturate",
) -> np.ndarray:
    """Vectorized :func:`flip_error` for one value under many masks."""
    word = encode_array(np.array([value], dtype=np.float64), spec, overflow)[0]
    faulty = np.asarray(mask_words, dtype=spec.word_dtype) ^ word
    # flips can yield signaling NaNs; subtracting through them is the
    # intended propagation
    with np.errstate(invalid="ignore"):
        return value - decode_array(faulty, spec)
