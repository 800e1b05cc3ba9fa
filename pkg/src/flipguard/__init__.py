"""Fault-injection simulator and weight-scaling hardening library."""

from .analysis import (
    CurvePoint,
    CurveStudyConfig,
    compare_oracle,
    exact_expected_abs_error_q,
    run_curve_study,
)
from .faults import (
    BitFlipMask,
    FaultConfig,
    Protection,
    flip_error,
    flip_errors,
    inject,
    inject_words,
    sample_mask,
    sample_mask_words,
)
from .formats import (
    FP16,
    FP32,
    QFIXED,
    BitPattern,
    DataTypeSpec,
    DTypeKind,
    decode,
    decode_array,
    encode,
    encode_array,
    roundtrip_check,
    spec_for,
)
from .guard import (
    LayerGuard,
    OutlierMode,
    StoredLayer,
    build_guard,
    compute_constant,
    default_t,
    extract_outliers,
    load_stored_layers,
    protect,
    recover,
    save_stored_layers,
)
from .network import (
    Dataset,
    EvalMode,
    EvalResult,
    FaultPlan,
    Layer,
    Model,
    evaluate_top1,
    forward,
    forward_logit_division,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    scale_for_storage,
    top1_accuracy,
)
from .rng import substream

__version__ = "0.1.0"
