"""Experiment orchestration and result persistence.

Each experiment is a pure function of (config, seed): the sweep grid is
evaluated cell by cell over disjoint RNG substreams and the rows are
emitted in grid order, so rerunning a config reproduces every output
byte.  Results are written as CSV (fixed field formatting) plus a JSON
mirror that embeds the exact config echo.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .analysis import CURVE_CSV_COLUMNS, CurveStudyConfig, run_curve_study
from .faults import Protection
from .formats import DataTypeSpec, DTypeKind, spec_for
from .guard import default_t
from .network import (
    Dataset,
    EvalMode,
    FaultPlan,
    Model,
    evaluate_top1,
    load_dataset,
    load_model,
)

EXPERIMENTS = ("curves", "ber-sweep", "model-fault", "logit-div")

# The sweep t grids used throughout the BER x t experiments.
SWEEP_T_FLOAT = (0.5, 1.0, 1.5, 1.9999, 2.5, 3.0, 3.5, 4.0)
SWEEP_T_QFIXED = (0.5, 1.0, 1.5, 1.97, 2.5, 3.0, 3.5, 4.0)

DEFAULT_BERS = (1e-3, 1e-4, 1e-5)


def sweep_ts(spec: DataTypeSpec) -> tuple[float, ...]:
    return SWEEP_T_QFIXED if spec.kind is DTypeKind.QFIXED else SWEEP_T_FLOAT


def default_protection(spec: DataTypeSpec) -> Protection:
    """exp-msb for floating formats, none (a no-op anyway) for q2.5."""
    return Protection.EXPONENT_MSB if spec.is_float else Protection.NONE


@dataclass
class ExperimentConfig:
    experiment: str
    dtype: str = "fp32"
    bers: tuple[float, ...] = DEFAULT_BERS
    ts: tuple[float, ...] | None = None
    rounds: int = 10
    seed: int = 0
    protection: str | None = None  # None resolves per dtype
    model: str | None = None
    dataset: str | None = None
    out: str | None = None
    overflow: str = "saturate"
    batch_size: int = 256
    # curves-only knobs
    grid_min: float = -0.5
    grid_max: float = 0.5
    grid_step: float = 0.01
    constants: tuple[float, ...] = (1.0, 2.0, 3.0)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.bers:
            raise ValueError("ber list must be non-empty")
        if self.ts is not None and not self.ts:
            raise ValueError("t list must be non-empty")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    @property
    def spec(self) -> DataTypeSpec:
        return spec_for(self.dtype)

    def resolved_protection(self) -> Protection:
        if self.protection is None:
            return default_protection(self.spec)
        return Protection(self.protection)

    def resolved_ts(self) -> tuple[float, ...]:
        return self.ts if self.ts is not None else sweep_ts(self.spec)

    def echo(self) -> dict:
        d = asdict(self)
        d["protection"] = self.resolved_protection().value
        d["ts"] = list(self.resolved_ts())
        d["bers"] = list(self.bers)
        d["constants"] = list(self.constants)
        return d


@dataclass
class ResultRecord:
    experiment: str
    config: dict
    columns: tuple[str, ...]
    rows: list[tuple[str, ...]]
    seed: int
    wall_clock_s: float = 0.0


def _fmt_acc(x: float) -> str:
    return f"{x:.4f}"


def _load_inputs(cfg: ExperimentConfig) -> tuple[Model, Dataset]:
    if not cfg.model or not cfg.dataset:
        raise ValueError("experiment needs --model and --dataset paths")
    return load_model(cfg.model), load_dataset(cfg.dataset)


def run_ber_sweep(cfg: ExperimentConfig) -> ResultRecord:
    """Top-1 accuracy over the full (ber, t) cross product."""
    start = time.perf_counter()
    model, dataset = _load_inputs(cfg)
    spec = cfg.spec
    protection = cfg.resolved_protection()
    ts = cfg.resolved_ts()
    rows = []
    for ber in cfg.bers:
        for t in ts:
            plan = FaultPlan(
                spec=spec,
                ber=ber,
                protection=protection,
                seed=cfg.seed,
                mode=EvalMode.RESCALED,
                t=t,
                overflow=cfg.overflow,
                batch_size=cfg.batch_size,
            )
            res = evaluate_top1(model, dataset, plan, cfg.rounds)
            rows.append(
                (
                    cfg.dtype,
                    f"{ber:g}",
                    f"{t:g}",
                    str(cfg.rounds),
                    str(cfg.seed),
                    _fmt_acc(res.mean),
                    _fmt_acc(res.std),
                )
            )
    expected = len(cfg.bers) * len(ts)
    if len(rows) != expected:
        raise RuntimeError(f"sweep produced {len(rows)} cells, expected {expected}")
    return ResultRecord(
        experiment="ber-sweep",
        config=cfg.echo(),
        columns=("dtype", "ber", "t", "rounds", "seed", "mean_top1", "std_top1"),
        rows=rows,
        seed=cfg.seed,
        wall_clock_s=time.perf_counter() - start,
    )


def run_model_fault(cfg: ExperimentConfig) -> ResultRecord:
    """Unscaled baseline versus the optimal-t guard, with the delta."""
    start = time.perf_counter()
    model, dataset = _load_inputs(cfg)
    spec = cfg.spec
    protection = cfg.resolved_protection()
    t_opt = cfg.ts[0] if cfg.ts else default_t(spec)
    rows = []
    for ber in cfg.bers:
        common = dict(
            spec=spec,
            ber=ber,
            protection=protection,
            seed=cfg.seed,
            mode=EvalMode.RESCALED,
            overflow=cfg.overflow,
            batch_size=cfg.batch_size,
        )
        base = evaluate_top1(model, dataset, FaultPlan(t=None, **common), cfg.rounds)
        guarded = evaluate_top1(model, dataset, FaultPlan(t=t_opt, **common), cfg.rounds)
        rows.append(
            (
                cfg.dtype,
                f"{ber:g}",
                "baseline",
                "1",
                str(cfg.rounds),
                str(cfg.seed),
                _fmt_acc(base.mean),
                _fmt_acc(base.std),
                _fmt_acc(0.0),
            )
        )
        rows.append(
            (
                cfg.dtype,
                f"{ber:g}",
                "guarded",
                f"{t_opt:g}",
                str(cfg.rounds),
                str(cfg.seed),
                _fmt_acc(guarded.mean),
                _fmt_acc(guarded.std),
                _fmt_acc(guarded.mean - base.mean),
            )
        )
    return ResultRecord(
        experiment="model-fault",
        config=cfg.echo(),
        columns=(
            "dtype",
            "ber",
            "mode",
            "t",
            "rounds",
            "seed",
            "mean_top1",
            "std_top1",
            "delta_vs_baseline",
        ),
        rows=rows,
        seed=cfg.seed,
        wall_clock_s=time.perf_counter() - start,
    )


def run_logit_division(cfg: ExperimentConfig) -> ResultRecord:
    """Per-weight rescale versus logit division on the same guards."""
    start = time.perf_counter()
    model, dataset = _load_inputs(cfg)
    spec = cfg.spec
    protection = cfg.resolved_protection()
    t_opt = cfg.ts[0] if cfg.ts else default_t(spec)
    rows = []
    for ber in cfg.bers:
        for mode in (EvalMode.RESCALED, EvalMode.LOGIT_DIVISION):
            plan = FaultPlan(
                spec=spec,
                ber=ber,
                protection=protection,
                seed=cfg.seed,
                mode=mode,
                t=t_opt,
                overflow=cfg.overflow,
                batch_size=cfg.batch_size,
            )
            res = evaluate_top1(model, dataset, plan, cfg.rounds)
            rows.append(
                (
                    cfg.dtype,
                    f"{ber:g}",
                    mode.value,
                    f"{t_opt:g}",
                    str(cfg.rounds),
                    str(cfg.seed),
                    _fmt_acc(res.mean),
                    _fmt_acc(res.std),
                    str(res.division_count),
                )
            )
    return ResultRecord(
        experiment="logit-div",
        config=cfg.echo(),
        columns=(
            "dtype",
            "ber",
            "mode",
            "t",
            "rounds",
            "seed",
            "mean_top1",
            "std_top1",
            "division_count",
        ),
        rows=rows,
        seed=cfg.seed,
        wall_clock_s=time.perf_counter() - start,
    )


def run_curves(cfg: ExperimentConfig) -> ResultRecord:
    """Error-curve study rows in the curve CSV schema."""
    start = time.perf_counter()
    study = CurveStudyConfig(
        grid_min=cfg.grid_min,
        grid_max=cfg.grid_max,
        grid_step=cfg.grid_step,
        ber=cfg.bers[0],
        rounds=cfg.rounds,
        constants=cfg.constants,
        spec=cfg.spec,
        protection=cfg.resolved_protection(),
        seed=cfg.seed,
        overflow=cfg.overflow,
    )
    points = run_curve_study(study)
    rows = [
        (
            f"{p.weight:.4f}",
            f"{p.constant:g}",
            cfg.dtype,
            f"{study.ber:g}",
            str(study.rounds),
            f"{p.mean_abs_error:.12e}",
            f"{p.finite_fraction:.6f}",
        )
        for p in points
    ]
    return ResultRecord(
        experiment="curves",
        config=cfg.echo(),
        columns=CURVE_CSV_COLUMNS,
        rows=rows,
        seed=cfg.seed,
        wall_clock_s=time.perf_counter() - start,
    )


RUNNERS = {
    "curves": run_curves,
    "ber-sweep": run_ber_sweep,
    "model-fault": run_model_fault,
    "logit-div": run_logit_division,
}


def run_experiment(cfg: ExperimentConfig) -> ResultRecord:
    return RUNNERS[cfg.experiment](cfg)


def render_csv(record: ResultRecord) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(record.columns)
    writer.writerows(record.rows)
    return buf.getvalue()


def write_results(record: ResultRecord, out_base) -> tuple[Path, Path]:
    """Write <out>.csv and <out>.json; returns both paths.

    The CSV is a pure function of (config, seed).  The JSON mirror adds
    the config echo and wall clock, so only the CSV is golden-file
    stable.
    """
    base = Path(out_base)
    if base.suffix == ".csv":
        base = base.with_suffix("")
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(render_csv(record))
    json_path.write_text(
        json.dumps(
            {
                "experiment": record.experiment,
                "config": record.config,
                "seed": record.seed,
                "columns": list(record.columns),
                "rows": [list(r) for r in record.rows],
                "wall_clock_s": record.wall_clock_s,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return csv_path, json_path


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed config file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"malformed config file {path}: expected a JSON object")
    return raw


def merge_config(experiment: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Precedence: built-in defaults < config file < command-line flags."""
    merged: dict = {"experiment": experiment}
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            if key in ("bers", "ts", "constants") and value is not None:
                value = tuple(value)
            merged[key] = value
    return ExperimentConfig(**merged)
