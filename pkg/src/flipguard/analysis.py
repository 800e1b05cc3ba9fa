"""Monte Carlo error curves over a pseudo-weight grid.

Reproduces the scaling-versus-baseline absolute error analysis: for each
grid weight w and constant c, bit flips are injected into the encoding
of c*w and the recovered error ``|e(c*w, M) / c|`` is averaged over many
mask draws.  For the 8-bit fixed-point format an exact 256-mask
enumeration provides an independent oracle that the Monte Carlo
estimates must match.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .faults import Protection, flip_errors, sample_mask_words
from .formats import QFIXED, DataTypeSpec, DTypeKind, decode_array, encode_array
from .rng import substream


@dataclass(frozen=True)
class CurveStudyConfig:
    grid_min: float = -0.5
    grid_max: float = 0.5
    grid_step: float = 0.01
    ber: float = 0.1
    rounds: int = 100_000
    constants: tuple[float, ...] = (1.0, 2.0, 3.0)
    spec: DataTypeSpec = QFIXED
    protection: Protection = Protection.NONE
    seed: int = 0
    overflow: str = "saturate"

    def __post_init__(self) -> None:
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if self.grid_min >= self.grid_max:
            raise ValueError("grid_min must be below grid_max")
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"ber must be in [0, 1], got {self.ber}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def grid(self) -> np.ndarray:
        """Grid weights, endpoints inclusive."""
        count = int(round((self.grid_max - self.grid_min) / self.grid_step)) + 1
        return np.linspace(self.grid_min, self.grid_max, count)


@dataclass(frozen=True)
class CurvePoint:
    weight: float
    constant: float
    mean_abs_error: float
    finite_fraction: float


def _point_samples(
    cfg: CurveStudyConfig, weight: float, constant: float, rng
) -> np.ndarray:
    masks = sample_mask_words(cfg.spec, cfg.ber, cfg.protection, cfg.rounds, rng)
    errors = flip_errors(constant * weight, masks, cfg.spec, cfg.overflow)
    return np.abs(errors) / constant


def run_curve_study(cfg: CurveStudyConfig) -> list[CurvePoint]:
    """One curve point per (grid weight, constant), in grid order.

    Means are taken over finite samples only; the finite fraction is
    reported alongside.  Each point uses its own substream, so results
    do not depend on evaluation order.
    """
    points: list[CurvePoint] = []
    grid = cfg.grid()
    for ci, constant in enumerate(cfg.constants):
        for wi, weight in enumerate(grid):
            rng = substream(cfg.seed, "curves", ci, wi)
            samples = _point_samples(cfg, float(weight), float(constant), rng)
            finite = np.isfinite(samples)
            n_finite = int(finite.sum())
            mean = float(samples[finite].mean()) if n_finite else float("nan")
            points.append(
                CurvePoint(
                    weight=float(weight),
                    constant=float(constant),
                    mean_abs_error=mean,
                    finite_fraction=n_finite / cfg.rounds,
                )
            )
    return points


_POPCOUNT8 = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1)


def exact_expected_abs_error_q(
    value: float,
    constant: float,
    ber: float,
    spec: DataTypeSpec = QFIXED,
    overflow: str = "saturate",
) -> float:
    """Exact E[|e(c*v, M)| / c] for q2.5 by enumerating all 256 masks.

    Each mask m is weighted by ber^popcount(m) * (1-ber)^(8-popcount(m));
    the error is computed through the same codec as the simulator, so
    this is exact up to float accumulation.
    """
    if spec.kind is not DTypeKind.QFIXED:
        raise ValueError("enumeration infeasible: exact oracle is q2.5 only")
    if not 0.0 <= ber <= 1.0:
        raise ValueError(f"ber must be in [0, 1], got {ber}")
    scaled = constant * value
    word = encode_array(np.array([scaled]), spec, overflow)[0]
    masks = np.arange(256, dtype=np.uint8)
    probs = np.power(ber, _POPCOUNT8) * np.power(1.0 - ber, 8 - _POPCOUNT8)
    errors = scaled - decode_array(word ^ masks, spec)
    return float(np.sum(probs * np.abs(errors)) / constant)


@dataclass(frozen=True)
class OracleComparison:
    weight: float
    constant: float
    monte_carlo_mean: float
    exact_mean: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.monte_carlo_mean - self.exact_mean) <= self.tolerance


@dataclass(frozen=True)
class OracleReport:
    rows: tuple[OracleComparison, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)


def compare_oracle(cfg: CurveStudyConfig) -> OracleReport:
    """Check Monte Carlo means against the exact oracle per grid point.

    The acceptance bound is 4 standard errors, with sigma estimated from
    the Monte Carlo samples themselves (ber = 0 degenerates to exact
    equality).
    """
    if cfg.spec.kind is not DTypeKind.QFIXED:
        raise ValueError("enumeration infeasible: oracle comparison is q2.5 only")
    rows = []
    for ci, constant in enumerate(cfg.constants):
        for wi, weight in enumerate(cfg.grid()):
            rng = substream(cfg.seed, "curves", ci, wi)
            samples = _point_samples(cfg, float(weight), float(constant), rng)
            mc_mean = float(samples.mean())
            sigma = float(samples.std(ddof=1)) if cfg.rounds > 1 else 0.0
            exact = exact_expected_abs_error_q(
                float(weight), float(constant), cfg.ber, cfg.spec, cfg.overflow
            )
            rows.append(
                OracleComparison(
                    weight=float(weight),
                    constant=float(constant),
                    monte_carlo_mean=mc_mean,
                    exact_mean=exact,
                    tolerance=4.0 * sigma / np.sqrt(cfg.rounds),
                )
            )
    return OracleReport(rows=tuple(rows))


CURVE_CSV_COLUMNS = (
    "weight",
    "constant",
    "dtype",
    "ber",
    "rounds",
    "mean_abs_error",
    "finite_fraction",
)


def write_curve_csv(points: list[CurvePoint], cfg: CurveStudyConfig, path) -> None:
    """Write curve points with fixed field formatting (golden-file stable)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_CSV_COLUMNS)
        for p in points:
            writer.writerow(
                [
                    f"{p.weight:.4f}",
                    f"{p.constant:g}",
                    cfg.spec.kind.value,
                    f"{cfg.ber:g}",
                    str(cfg.rounds),
                    f"{p.mean_abs_error:.12e}",
                    f"{p.finite_fraction:.6f}",
                ]
            )
