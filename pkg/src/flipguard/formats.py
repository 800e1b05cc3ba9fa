"""Bit-exact codecs for the three weight storage formats.

Supported formats:

    fp32    IEEE binary32 (1 sign, 8 exponent, 23 mantissa bits)
    fp16    IEEE binary16 (1 sign, 5 exponent, 10 mantissa bits)
    q2.5    8-bit two's-complement fixed point with a 2^-6 step.
            Representable range is exactly [-2.0, 1.984375]; encoding
            saturates on overflow by default (wraparound is available
            for sensitivity studies).

Bit indexing convention: bit 1 is the MSB (the sign bit), bit ``width``
is the LSB.  This matches the layout used throughout the fault model.

All scalar operations are pure; the ``*_array`` variants are the
vectorized equivalents used on hot paths and are bit-identical to the
scalar ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

Q_FRACTION_BITS = 6
Q_STEP = 2.0**-Q_FRACTION_BITS

# Canonical quiet-NaN payloads produced when a NaN is re-encoded.
CANONICAL_NAN_FP32 = 0x7FC00000
CANONICAL_NAN_FP16 = 0x7E00


class DTypeKind(enum.Enum):
    FP32 = "fp32"
    FP16 = "fp16"
    QFIXED = "q2.5"


@dataclass(frozen=True)
class DataTypeSpec:
    """Describes one storage format: width, field layout and value range."""

    kind: DTypeKind
    total_bits: int
    representable_min: float
    representable_max: float
    integer_bits_incl_sign: int | None = None
    fraction_step: float | None = None

    def __post_init__(self) -> None:
        expected = {DTypeKind.FP32: 32, DTypeKind.FP16: 16, DTypeKind.QFIXED: 8}
        if self.total_bits != expected[self.kind]:
            raise ValueError(
                f"{self.kind.value} requires {expected[self.kind]} bits, "
                f"got {self.total_bits}"
            )
        if self.kind is DTypeKind.QFIXED:
            if (self.representable_min, self.representable_max) != (-2.0, 1.984375):
                raise ValueError("q2.5 range must be exactly [-2.0, 1.984375]")
            if self.fraction_step != Q_STEP:
                raise ValueError("q2.5 step must be 2^-6")

    @property
    def is_float(self) -> bool:
        return self.kind is not DTypeKind.QFIXED

    @property
    def word_dtype(self) -> np.dtype:
        """Unsigned integer dtype holding one encoded pattern."""
        return np.dtype({32: np.uint32, 16: np.uint16, 8: np.uint8}[self.total_bits])

    @property
    def float_dtype(self) -> np.dtype:
        if self.kind is DTypeKind.FP32:
            return np.dtype(np.float32)
        if self.kind is DTypeKind.FP16:
            return np.dtype(np.float16)
        raise ValueError("q2.5 has no native float dtype")

    @property
    def canonical_nan_word(self) -> int:
        if self.kind is DTypeKind.FP32:
            return CANONICAL_NAN_FP32
        if self.kind is DTypeKind.FP16:
            return CANONICAL_NAN_FP16
        raise ValueError("q2.5 has no NaN encoding")


FP32 = DataTypeSpec(DTypeKind.FP32, 32, -3.4028234663852886e38, 3.4028234663852886e38)
FP16 = DataTypeSpec(DTypeKind.FP16, 16, -65504.0, 65504.0)
QFIXED = DataTypeSpec(
    DTypeKind.QFIXED,
    8,
    -2.0,
    1.984375,
    integer_bits_incl_sign=2,
    fraction_step=Q_STEP,
)

_SPEC_BY_NAME = {
    "fp32": FP32,
    "fp16": FP16,
    "q2.5": QFIXED,
    "qfixed": QFIXED,
}


def spec_for(name: str) -> DataTypeSpec:
    """Look up a format by its CLI name (``fp32``, ``fp16`` or ``q2.5``)."""
    try:
        return _SPEC_BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(f"unknown dtype {name!r}; expected fp32, fp16 or q2.5") from None


class _BitVector:
    """Fixed-width bit vector stored as an unsigned integer.

    Bit 1 is the MSB; bit ``width`` is the LSB.
    """

    __slots__ = ("width", "word")

    def __init__(self, width: int, word: int):
        if width <= 0:
            raise ValueError("width must be positive")
        if not 0 <= word < (1 << width):
            raise ValueError(f"word 0x{word:X} does not fit in {width} bits")
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "word", word)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def bit(self, index: int) -> int:
        """Return bit at 1-based ``index`` (1 = MSB)."""
        if not 1 <= index <= self.width:
            raise IndexError(f"bit index {index} out of range 1..{self.width}")
        return (self.word >> (self.width - index)) & 1

    def bits(self) -> tuple[int, ...]:
        return tuple(self.bit(i) for i in range(1, self.width + 1))

    @classmethod
    def from_bits(cls, bits):
        bits = tuple(int(b) for b in bits)
        word = 0
        for b in bits:
            if b not in (0, 1):
                raise ValueError("bits must be 0 or 1")
            word = (word << 1) | b
        return cls(len(bits), word)

    def __eq__(self, other) -> bool:
        return (
            type(self) is type(other)
            and self.width == other.width
            and self.word == other.word
        )

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.width, self.word))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.width}, 0b{self.word:0{self.width}b})"


class BitPattern(_BitVector):
    """One encoded weight; produced by :func:`encode`."""

    def flipped(self, index: int) -> "BitPattern":
        """Return a copy with the 1-based bit at ``index`` inverted."""
        self.bit(index)  # bounds check
        return BitPattern(self.width, self.word ^ (1 << (self.width - index)))


def encode_array(
    values, spec: DataTypeSpec, overflow: str = "saturate"
) -> np.ndarray:
    """Encode real values into packed pattern words.

    Floating formats use standard round-to-nearest-even narrowing and
    encode non-finite inputs exactly (NaN collapses to the canonical
    quiet NaN).  q2.5 rounds to the nearest multiple of 2^-6 with ties
    to even and then saturates (or wraps, if requested); non-finite
    inputs are rejected because the format cannot represent them.
    """
    vals = np.asarray(values, dtype=np.float64)
    if spec.kind is DTypeKind.QFIXED:
        if not np.all(np.isfinite(vals)):
            raise ValueError("unencodable value: q2.5 cannot represent non-finite input")
        q = np.round(vals / Q_STEP)
        if overflow == "saturate":
            q = np.clip(q, -128, 127)
        elif overflow == "wrap":
            q = np.mod(q, 256)
        else:
            raise ValueError(f"unknown overflow mode {overflow!r}")
        return (q.astype(np.int64) & 0xFF).astype(np.uint8)

    with np.errstate(over="ignore", invalid="ignore"):
        narrowed = vals.astype(spec.float_dtype)
    words = narrowed.view(spec.word_dtype).copy()
    nan_mask = np.isnan(narrowed)
    if np.any(nan_mask):
        words[nan_mask] = spec.canonical_nan_word
    return words


def decode_array(words, spec: DataTypeSpec) -> np.ndarray:
    """Decode packed pattern words to float64 values (exact superset)."""
    arr = np.asarray(words, dtype=spec.word_dtype)
    if spec.kind is DTypeKind.QFIXED:
        return arr.view(np.int8).astype(np.float64) * Q_STEP
    with np.errstate(invalid="ignore"):
        return arr.view(spec.float_dtype).astype(np.float64)


def encode(value: float, spec: DataTypeSpec, overflow: str = "saturate") -> BitPattern:
    """Encode one real value; see :func:`encode_array` for the rules."""
    word = int(encode_array(np.array([value], dtype=np.float64), spec, overflow)[0])
    return BitPattern(spec.total_bits, word)


def decode(pattern: BitPattern, spec: DataTypeSpec) -> float:
    """Decode one pattern to its exact value (may be +/-Inf or NaN for floats)."""
    if pattern.width != spec.total_bits:
        raise ValueError(
            f"width mismatch: pattern has {pattern.width} bits, "
            f"{spec.kind.value} needs {spec.total_bits}"
        )
    return float(decode_array(np.array([pattern.word], dtype=spec.word_dtype), spec)[0])


def largest_magnitude_below(spec: DataTypeSpec, bound: float) -> float:
    """Largest representable value strictly below ``bound`` (one step down)."""
    if spec.kind is DTypeKind.QFIXED:
        q = int(np.ceil(bound / Q_STEP)) - 1
        return max(-128, min(127, q)) * Q_STEP
    below = np.nextafter(spec.float_dtype.type(bound), spec.float_dtype.type(0.0))
    return float(below)


@dataclass(frozen=True)
class RoundTripReport:
    """Outcome of a decode->encode sweep over a format's patterns."""

    spec: DataTypeSpec
    total: int
    checked: int
    nan_patterns: int
    violations: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return not self.violations


def roundtrip_check(
    spec: DataTypeSpec, sample_size: int = 1_000_000, seed: int = 0
) -> RoundTripReport:
    """Verify that decode followed by encode reproduces patterns bit-exactly.

    Exhaustive for fp16 and q2.5.  fp32 is checked on ``sample_size``
    random patterns (non-finite patterns are included; NaN payloads are
    excluded from the bit-exactness requirement since they re-encode to
    the canonical quiet NaN).
    """
    if spec.kind is DTypeKind.QFIXED:
        words = np.arange(256, dtype=np.uint8)
    elif spec.kind is DTypeKind.FP16:
        words = np.arange(65536, dtype=np.uint16)
    else:
        rng = np.random.Generator(np.random.Philox(seed))
        words = rng.integers(0, 2**32, size=sample_size, dtype=np.uint64).astype(
            np.uint32
        )

    total = words.size
    if spec.is_float:
        nan_mask = np.isnan(words.view(spec.float_dtype))
    else:
        nan_mask = np.zeros(total, dtype=bool)
    checked_words = words[~nan_mask]

    decoded = decode_array(checked_words, spec)
    reencoded = encode_array(decoded, spec)
    bad = checked_words[reencoded != checked_words]

    # NaN patterns must still re-encode to the canonical quiet NaN.
    nan_words = words[nan_mask]
    if nan_words.size:
        renan = encode_array(decode_array(nan_words, spec), spec)
        bad_nan = nan_words[renan != spec.canonical_nan_word]
        bad = np.concatenate([bad, bad_nan])

    return RoundTripReport(
        spec=spec,
        total=total,
        checked=int(checked_words.size),
        nan_patterns=int(nan_mask.sum()),
        violations=tuple(int(w) for w in bad[:32]),
    )
