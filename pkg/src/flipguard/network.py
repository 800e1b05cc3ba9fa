"""Minimal deterministic feed-forward engine for fault experiments.

Dense layers with ReLU hidden activations and a linear output.  All
arithmetic runs in float32 regardless of the storage format; only the
stored weights experience bit flips.  Three execution modes are
supported: unprotected baseline, per-weight rescale after readout, and
logit division (running on scaled weights and dividing only the final
logits by the cumulative product of constants).
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .faults import Protection, sample_mask_words
from .formats import DataTypeSpec
from .guard import StoredLayer, build_guard, protect, recover
from .rng import substream

RELU = "relu"
LINEAR = "none"


@dataclass
class Layer:
    weights: np.ndarray  # float32, shape (out, in)
    bias: np.ndarray | None  # float32, shape (out,)
    activation: str = RELU

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float32)
        if self.weights.ndim != 2:
            raise ValueError("layer weights must be 2-D (out, in)")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.weights.shape[0],):
                raise ValueError("shape mismatch: bias must be (out,)")
        if self.activation not in (RELU, LINEAR):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Model:
    layers: list[Layer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ValueError("shape mismatch: consecutive layers do not compose")
        if self.layers[-1].activation != LINEAR:
            raise ValueError("final layer must be linear (logits)")

    @property
    def n_weights(self) -> int:
        return sum(l.weights.size for l in self.layers)

    @property
    def n_classes(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]


@dataclass
class Dataset:
    features: np.ndarray  # float32, shape (n, dim)
    labels: np.ndarray  # int64, shape (n,)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("shape mismatch: features (n, dim) and labels (n,)")

    def __len__(self) -> int:
        return self.features.shape[0]


def forward(
    model: Model,
    x: np.ndarray,
    weight_override: list[np.ndarray] | None = None,
    bias_override: list[np.ndarray | None] | None = None,
) -> np.ndarray:
    """Affine + ReLU composition in float32; returns logits (batch, classes)."""
    acts = np.asarray(x, dtype=np.float32)
    if acts.ndim != 2 or acts.shape[1] != model.input_dim:
        raise ValueError("shape mismatch: input must be (batch, input_dim)")
    # Corrupted weights can legitimately overflow float32; Inf/NaN logits
    # are propagated and count as misclassifications downstream.
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(model.layers):
            w = layer.weights if weight_override is None else weight_override[i]
            b = layer.bias if bias_override is None else bias_override[i]
            acts = acts @ w.T.astype(np.float32)
            if b is not None:
                acts = acts + b
            if layer.activation == RELU:
                acts = np.maximum(acts, np.float32(0.0))
    return acts


def cumulative_constants(constants) -> np.ndarray:
    consts = np.asarray(constants, dtype=np.float64)
    if np.any(consts <= 0):
        raise ValueError("constants must be positive")
    return np.cumprod(consts)


def scale_for_storage(model: Model, constants) -> Model:
    """Return the scaled twin of a model: weights times c_i, biases times
    the running product of constants up to layer i."""
    cum = cumulative_constants(constants)
    if len(cum) != len(model.layers):
        raise ValueError("one constant per layer required")
    layers = []
    for layer, c, p in zip(model.layers, np.asarray(constants, np.float64), cum):
        w = (layer.weights.astype(np.float64) * c).astype(np.float32)
        b = None if layer.bias is None else (layer.bias.astype(np.float64) * p).astype(np.float32)
        layers.append(Layer(w, b, layer.activation))
    return Model(layers)


def forward_logit_division(
    scaled_model: Model, x: np.ndarray, constants
) -> tuple[np.ndarray, int]:
    """Run a constant-scaled network and divide only the final logits.

    Valid only for positively homogeneous hidden activations (ReLU) and
    positive constants.  Returns the rescaled logits and the number of
    divisions performed, which is classes * batch.
    """
    for layer in scaled_model.layers[:-1]:
        if layer.activation != RELU:
            raise ValueError("not positively homogeneous: hidden layers must be ReLU")
    cum = cumulative_constants(constants)
    if len(cum) != len(scaled_model.layers):
        raise ValueError("one constant per layer required")
    logits = forward(scaled_model, x)
    total = np.float32(cum[-1])
    divisions = logits.shape[0] * logits.shape[1]
    return logits / total, divisions


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of samples whose highest logit matches the label."""
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == labels) * 100.0)


class EvalMode(enum.Enum):
    BASELINE = "baseline"
    RESCALED = "rescaled"
    LOGIT_DIVISION = "logit-division"


@dataclass(frozen=True)
class FaultPlan:
    """Everything evaluate_top1 needs: format, fault law, guards, mode."""

    spec: DataTypeSpec
    ber: float
    protection: Protection = Protection.NONE
    seed: int = 0
    mode: EvalMode = EvalMode.RESCALED
    t: float | None = None  # None means the unscaled c = 1 baseline
    overflow: str = "saturate"
    inject_bias: bool = False
    batch_size: int = 256


@dataclass(frozen=True)
class EvalResult:
    top1_accuracy: float
    rounds: int
    mean: float
    std: float
    division_count: int
    round_accuracies: tuple[float, ...] = field(default_factory=tuple)


def _plan_guards(model: Model, plan: FaultPlan) -> list[StoredLayer]:
    stored = []
    for i, layer in enumerate(model.layers):
        constant = 1.0 if plan.t is None else None
        t = plan.t if plan.t is not None else max(
            float(np.max(np.abs(layer.weights))), np.finfo(np.float32).tiny
        )
        guard, exposed = build_guard(
            layer.weights, plan.spec, t=t, layer_index=i, constant=constant
        )
        stored.append(
            protect(exposed.reshape(layer.weights.shape), guard, plan.overflow)
        )
    return stored


def evaluate_top1(
    model: Model, dataset: Dataset, plan: FaultPlan, rounds: int
) -> EvalResult:
    """Mean and std of top-1 accuracy over Monte Carlo fault rounds.

    Masks are redrawn each round from the substream (seed, round, layer),
    which is shared across ber/t/mode cells so that sweep comparisons see
    identical fault realizations.  Faults hit weights only; biases stay
    exact unless ``inject_bias`` is set.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    stored = _plan_guards(model, plan)
    constants = [s.guard.constant for s in stored]
    cum = cumulative_constants(constants)

    if plan.mode is EvalMode.LOGIT_DIVISION:
        for layer in model.layers[:-1]:
            if layer.activation != RELU:
                raise ValueError("not positively homogeneous: hidden layers must be ReLU")
        scaled_biases = [
            None
            if l.bias is None
            else (l.bias.astype(np.float64) * p).astype(np.float32)
            for l, p in zip(model.layers, cum)
        ]

    stored_biases = None
    if plan.inject_bias:
        stored_biases = [
            None if layer.bias is None else _bias_stored(layer.bias, plan)
            for layer in model.layers
        ]

    accs = []
    division_count = 0
    n = len(dataset)
    batch = max(1, min(plan.batch_size, n))
    for r in range(rounds):
        weights = []
        for i, s in enumerate(stored):
            rng = substream(plan.seed, "eval", r, i)
            masks = sample_mask_words(
                plan.spec, plan.ber, plan.protection, s.words.size, rng
            ).reshape(s.words.shape)
            if plan.mode is EvalMode.LOGIT_DIVISION:
                faulted = (s.words ^ masks).copy()
                vals = recover(StoredLayer(faulted, s.guard, s.shape))
                weights.append((vals * s.guard.constant).astype(np.float32))
            else:
                weights.append(recover(s, masks).astype(np.float32))
        if stored_biases is not None:
            weights_biases = []
            for i, bstored in enumerate(stored_biases):
                if bstored is None:
                    weights_biases.append(None)
                    continue
                rng = substream(plan.seed, "eval-bias", r, i)
                bmasks = sample_mask_words(
                    plan.spec, plan.ber, plan.protection, bstored.words.size, rng
                )
                weights_biases.append(recover(bstored, bmasks).astype(np.float32))
        correct = 0
        for start in range(0, n, batch):
            xb = dataset.features[start : start + batch]
            yb = dataset.labels[start : start + batch]
            if plan.mode is EvalMode.LOGIT_DIVISION:
                logits = forward(model, xb, weight_override=weights, bias_override=scaled_biases)
                logits = logits / np.float32(cum[-1])
                if r == 0 and start == 0:
                    division_count = logits.shape[0] * logits.shape[1]
            else:
                bias_override = weights_biases if stored_biases is not None else None
                logits = forward(model, xb, weight_override=weights, bias_override=bias_override)
                if r == 0 and start == 0:
                    division_count = model.n_weights
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        accs.append(100.0 * correct / n)

    accs_arr = np.asarray(accs)
    mean = float(accs_arr.mean())
    std = float(accs_arr.std(ddof=1)) if rounds > 1 else 0.0
    return EvalResult(
        top1_accuracy=mean,
        rounds=rounds,
        mean=mean,
        std=std,
        division_count=division_count,
        round_accuracies=tuple(accs),
    )


def _bias_stored(bias: np.ndarray, plan: FaultPlan) -> StoredLayer:
    guard, exposed = build_guard(
        bias, plan.spec, t=plan.t, layer_index=-1, constant=1.0 if plan.t is None else None
    )
    return protect(exposed, guard, plan.overflow)


# -- model and dataset files ------------------------------------------------

_MODEL_FORMAT = "flipguard-model"
_DATASET_MAGIC = b"FGDS"


def save_model(model: Model, manifest_path) -> None:
    """Manifest JSON plus raw little-endian float32 weight arrays."""
    manifest_path = Path(manifest_path)
    data_path = manifest_path.with_suffix(".bin")
    blobs = []
    entries = []
    for layer in model.layers:
        blobs.append(layer.weights.astype("<f4").tobytes())
        if layer.bias is not None:
            blobs.append(layer.bias.astype("<f4").tobytes())
        entries.append(
            {
                "shape": list(layer.weights.shape),
                "bias": layer.bias is not None,
                "activation": layer.activation,
            }
        )
    payload = b"".join(blobs)
    manifest = {
        "format": _MODEL_FORMAT,
        "version": 1,
        "data_file": data_path.name,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "layers": entries,
    }
    data_path.write_bytes(payload)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model(manifest_path) -> Model:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
        if manifest["format"] != _MODEL_FORMAT:
            raise KeyError("format")
        entries = manifest["layers"]
        data_file = manifest["data_file"]
        expected_sha = manifest["sha256"]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed manifest {manifest_path}: {exc}") from exc
    payload = (manifest_path.parent / data_file).read_bytes()
    expected_bytes = sum(
        int(np.prod(e["shape"])) * 4 + (e["shape"][0] * 4 if e["bias"] else 0)
        for e in entries
    )
    if len(payload) != expected_bytes:
        raise ValueError(
            f"shape mismatch: weight file holds {len(payload)} bytes, "
            f"manifest expects {expected_bytes}"
        )
    if hashlib.sha256(payload).hexdigest() != expected_sha:
        raise ValueError(f"checksum failure for {data_file}")
    layers = []
    offset = 0
    for entry in entries:
        out_dim, in_dim = entry["shape"]
        w = np.frombuffer(payload, dtype="<f4", count=out_dim * in_dim, offset=offset)
        offset += out_dim * in_dim * 4
        w = w.reshape(out_dim, in_dim).astype(np.float32)
        b = None
        if entry["bias"]:
            b = np.frombuffer(payload, dtype="<f4", count=out_dim, offset=offset).astype(
                np.float32
            )
            offset += out_dim * 4
        layers.append(Layer(w, b, entry["activation"]))
    return Model(layers)


def save_dataset(dataset: Dataset, path) -> None:
    """Binary dataset: small header, float32 features, int32 labels."""
    path = Path(path)
    n, dim = dataset.features.shape
    classes = int(dataset.labels.max()) + 1 if n else 0
    header = _DATASET_MAGIC + struct.pack("<IIII", 1, n, dim, classes)
    body = dataset.features.astype("<f4").tobytes() + dataset.labels.astype("<i4").tobytes()
    path.write_bytes(header + body)


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != _DATASET_MAGIC:
        raise ValueError(f"malformed manifest {path}: bad dataset magic")
    version, n, dim, _classes = struct.unpack("<IIII", raw[4:20])
    if version != 1:
        raise ValueError(f"unsupported dataset version {version}")
    expected = 20 + n * dim * 4 + n * 4
    if len(raw) != expected:
        raise ValueError(f"shape mismatch: dataset holds {len(raw)} bytes, expected {expected}")
    feats = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=20).reshape(n, dim)
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=20 + n * dim * 4)
    return Dataset(feats.astype(np.float32), labels.astype(np.int64))
