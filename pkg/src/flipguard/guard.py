"""Per-layer weight scaling defense.

Weights are multiplied by a per-layer constant before they are written
to the fault-prone medium and divided by the same constant after the
(possibly faulted) readout.  The constant is chosen so the scaled layer
fills the safe range up to a target magnitude ``t``: errors introduced
by bit flips are then shrunk by the division.

For floating-point storage the safe range is (-2, 2), which keeps the
exponent MSB at zero so that protecting that single bit bounds every
fault outcome.  Out-of-range source weights can be clamped (lossy) or
moved to a small exact side store (lossless).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import (
    BitPattern,
    DataTypeSpec,
    DTypeKind,
    decode_array,
    encode_array,
    largest_magnitude_below,
    spec_for,
)

DEFAULT_T_FLOAT = 1.9999
DEFAULT_T_QFIXED = 1.97

FP_SAFE_BOUND = 2.0


class OutlierMode(enum.Enum):
    CLAMP = "clamp"
    LOSSLESS = "lossless"


def default_t(spec: DataTypeSpec) -> float:
    return DEFAULT_T_QFIXED if spec.kind is DTypeKind.QFIXED else DEFAULT_T_FLOAT


def compute_constant(weights, t: float) -> float:
    """Largest constant that scales the layer into magnitude ``t``.

    Returns ``t / max(|weights|)`` nudged down (if needed) so that the
    product never exceeds ``t`` in float64.  An all-zero layer gets
    constant 1.0: there is nothing to scale and division must stay safe.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    peak = float(np.max(np.abs(np.asarray(weights, dtype=np.float64)))) if np.size(weights) else 0.0
    if peak == 0.0:
        return 1.0
    c = t / peak
    while c * peak > t:
        c = float(np.nextafter(c, 0.0))
    return c


def extract_outliers(
    weights,
    bound: tuple[float, float] = (-FP_SAFE_BOUND, FP_SAFE_BOUND),
    mode: OutlierMode = OutlierMode.CLAMP,
    spec: DataTypeSpec | None = None,
) -> tuple[np.ndarray, tuple[tuple[int, float], ...]]:
    """Separate weights outside the open interval ``bound``.

    CLAMP: out-of-range values are clamped one representable step inside
    the bound; the store keeps the originals for reference.
    LOSSLESS: out-of-range values are replaced by zero so they are never
    exposed to faults (nor counted in the layer maximum) and are
    reinserted exactly by :func:`recover`.
    """
    spec = spec or spec_for("fp32")
    flat = np.asarray(weights, dtype=np.float64).reshape(-1).copy()
    lo, hi = bound
    out = (flat <= lo) | (flat >= hi)
    store = tuple((int(j), float(flat[j])) for j in np.flatnonzero(out))
    if not store:
        return flat, store
    if mode is OutlierMode.CLAMP:
        hi_in = largest_magnitude_below(spec, hi)
        lo_in = -largest_magnitude_below(spec, -lo)
        flat[flat >= hi] = hi_in
        flat[flat <= lo] = lo_in
    else:
        flat[out] = 0.0
    return flat, store


@dataclass(frozen=True)
class LayerGuard:
    """Protection record for one layer: constant, target ``t``, outliers."""

    layer_index: int
    constant: float
    t: float
    spec: DataTypeSpec
    outliers: tuple[tuple[int, float], ...] = ()
    outlier_mode: OutlierMode = OutlierMode.CLAMP
    max_source_magnitude: float = 0.0

    def __post_init__(self) -> None:
        if self.constant <= 0:
            raise ValueError(f"constant must be positive, got {self.constant}")
        if self.t <= 0:
            raise ValueError(f"t must be positive, got {self.t}")


@dataclass
class StoredLayer:
    """The written form of one protected layer: packed patterns + guard."""

    words: np.ndarray
    guard: LayerGuard
    shape: tuple[int, ...]

    def pattern(self, j: int) -> BitPattern:
        return BitPattern(self.guard.spec.total_bits, int(self.words.reshape(-1)[j]))


def build_guard(
    weights,
    spec: DataTypeSpec,
    t: float | None = None,
    layer_index: int = 0,
    outlier_mode: OutlierMode = OutlierMode.CLAMP,
    constant: float | None = None,
) -> tuple[LayerGuard, np.ndarray]:
    """Compute a layer's guard; returns it with the outlier-free weights.

    The maximum is taken on the source-precision weights (after outlier
    removal) and recorded in the guard.  Passing ``constant`` overrides
    the optimal value (``constant=1.0`` is the unscaled baseline).
    """
    flat = np.asarray(weights, dtype=np.float64).reshape(-1)
    store: tuple[tuple[int, float], ...] = ()
    if spec.is_float:
        flat, store = extract_outliers(flat, mode=outlier_mode, spec=spec)
    t = default_t(spec) if t is None else float(t)
    peak = float(np.max(np.abs(flat))) if flat.size else 0.0
    c = compute_constant(flat, t) if constant is None else float(constant)
    guard = LayerGuard(
        layer_index=layer_index,
        constant=c,
        t=t,
        spec=spec,
        outliers=store,
        outlier_mode=outlier_mode,
        max_source_magnitude=peak,
    )
    return guard, flat


def protect(weights, guard: LayerGuard, overflow: str = "saturate") -> StoredLayer:
    """Scale a layer by its constant and encode it for storage.

    When a ``t < 2`` contract is requested for a floating format, scaled
    values must stay below magnitude 2 (that keeps the exponent MSB at
    zero).  A raw scaled value at or above 2 is an error; a value whose
    *encoding* rounds up to 2.0 (possible for fp16 near the top of the
    range) is stepped down to the largest representable value below 2.
    """
    arr = np.asarray(weights, dtype=np.float64)
    scaled = guard.constant * arr.reshape(-1)
    if not np.all(np.isfinite(scaled)):
        raise ValueError("unencodable value: scaled weights must be finite")
    spec = guard.spec
    enforce = spec.is_float and guard.t < FP_SAFE_BOUND
    if enforce and np.any(np.abs(scaled) >= FP_SAFE_BOUND):
        raise ValueError(
            "scaled weight violates exponent-MSB assumption: "
            f"|c*w| >= {FP_SAFE_BOUND} with t={guard.t}"
        )
    words = encode_array(scaled, spec, overflow)
    if enforce:
        decoded = decode_array(words, spec)
        crossed = np.abs(decoded) >= FP_SAFE_BOUND
        if np.any(crossed):
            top = largest_magnitude_below(spec, FP_SAFE_BOUND)
            fixed = np.where(decoded[crossed] > 0, top, -top)
            words[crossed] = encode_array(fixed, spec)
    return StoredLayer(words=words, guard=guard, shape=tuple(arr.shape))


def recover(stored: StoredLayer, mask_words: np.ndarray | None = None) -> np.ndarray:
    """Read a stored layer back (optionally through fault masks).

    Returns ``decode(pattern XOR mask) / constant`` per weight, with
    lossless outliers reinserted exactly.  Non-finite results from
    floating-point faults are propagated, not clamped.
    """
    words = stored.words
    if mask_words is not None:
        masks = np.asarray(mask_words, dtype=words.dtype)
        if masks.shape != words.shape:
            raise ValueError("width mismatch: one mask per stored weight required")
        words = words ^ masks
    # faults can produce signaling-NaN patterns; dividing them through is
    # intended propagation, not an arithmetic fault of ours
    with np.errstate(invalid="ignore"):
        values = decode_array(words, stored.guard.spec) / stored.guard.constant
    if stored.guard.outlier_mode is OutlierMode.LOSSLESS:
        for j, original in stored.guard.outliers:
            values[j] = original
    return values.reshape(stored.shape)


# -- serialization ----------------------------------------------------------

_MANIFEST_FORMAT = "flipguard-stored-layers"


def save_stored_layers(layers: list[StoredLayer], manifest_path) -> None:
    """Write stored layers as a JSON manifest plus raw pattern bytes.

    Pattern words are written little-endian in each element's natural
    byte width, in layer order.
    """
    manifest_path = Path(manifest_path)
    data_path = manifest_path.with_suffix(".bin")
    blobs = []
    entries = []
    offset = 0
    for layer in layers:
        blob = layer.words.astype(layer.words.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {
                "layer_index": layer.guard.layer_index,
                "dtype": layer.guard.spec.kind.value,
                "shape": list(layer.shape),
                "constant": layer.guard.constant,
                "t": layer.guard.t,
                "outlier_mode": layer.guard.outlier_mode.value,
                "outliers": [[j, v] for j, v in layer.guard.outliers],
                "max_source_magnitude": layer.guard.max_source_magnitude,
                "byte_offset": offset,
                "byte_length": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    payload = b"".join(blobs)
    manifest = {
        "format": _MANIFEST_FORMAT,
        "version": 1,
        "data_file": data_path.name,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "layers": entries,
    }
    data_path.write_bytes(payload)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_stored_layers(manifest_path) -> list[StoredLayer]:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        if manifest["format"] != _MANIFEST_FORMAT:
            raise KeyError("format")
        entries = manifest["layers"]
        data_file = manifest["data_file"]
        expected_sha = manifest["sha256"]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed manifest {manifest_path}: {exc}") from exc
    payload = (manifest_path.parent / data_file).read_bytes()
    if hashlib.sha256(payload).hexdigest() != expected_sha:
        raise ValueError(f"checksum failure for {data_file}")
    layers = []
    for entry in entries:
        spec = spec_for(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * spec.word_dtype.itemsize
        if entry["byte_length"] != nbytes:
            raise ValueError(f"shape mismatch in layer {entry['layer_index']}")
        raw = payload[entry["byte_offset"] : entry["byte_offset"] + nbytes]
        if len(raw) != nbytes:
            raise ValueError(f"shape mismatch in layer {entry['layer_index']}")
        words = np.frombuffer(raw, dtype=spec.word_dtype.newbyteorder("<")).astype(
            spec.word_dtype
        )
        guard = LayerGuard(
            layer_index=entry["layer_index"],
            constant=entry["constant"],
            t=entry["t"],
            spec=spec,
            outliers=tuple((int(j), float(v)) for j, v in entry["outliers"]),
            outlier_mode=OutlierMode(entry["outlier_mode"]),
            max_source_magnitude=entry.get("max_source_magnitude", 0.0),
        )
        layers.append(StoredLayer(words=words, guard=guard, shape=shape))
    return layers
