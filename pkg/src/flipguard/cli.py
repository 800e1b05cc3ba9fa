"""Command-line front end for the fault-injection experiments."""

from __future__ import annotations

import sys

import click

from . import assets
from .analysis import CurveStudyConfig, compare_oracle
from .faults import Protection
from .formats import FP16, FP32, QFIXED, roundtrip_check
from .harness import load_config_file, merge_config, run_experiment, write_results

_DTYPE_CHOICE = click.Choice(["fp32", "fp16", "q2.5"])
_PROTECTION_CHOICE = click.Choice(["none", "exp-msb"])
_OVERFLOW_CHOICE = click.Choice(["saturate", "wrap"])


def _common_options(fn):
    options = [
        click.option("--dtype", type=_DTYPE_CHOICE, default=None, help="Storage format."),
        click.option(
            "--ber",
            "bers",
            type=float,
            multiple=True,
            help="Bit-error rate; repeat for a sweep.",
        ),
        click.option(
            "--t", "ts", type=float, multiple=True, help="Target scaled magnitude t."
        ),
        click.option("--rounds", type=int, default=None, help="Monte Carlo rounds."),
        click.option(
            "--seed",
            type=int,
            default=None,
            envvar="FLIPGUARD_SEED",
            help="Experiment seed (FLIPGUARD_SEED is honored; the flag wins).",
        ),
        click.option("--protection", type=_PROTECTION_CHOICE, default=None),
        click.option("--overflow", type=_OVERFLOW_CHOICE, default=None,
                     help="q2.5 overflow handling (sensitivity studies)."),
        click.option("--out", type=click.Path(), default=None, help="Output base path."),
        click.option("--model", type=click.Path(), default=None, help="Model manifest."),
        click.option("--dataset", type=click.Path(), default=None, help="Dataset file."),
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True),
            default=None,
            help="JSON config file; flags override its values.",
        ),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _run(experiment: str, config_path, out, **flags) -> None:
    flags = {k: v for k, v in flags.items() if v not in (None, ())}
    if "bers" in flags:
        flags["bers"] = tuple(flags["bers"])
    if "ts" in flags:
        flags["ts"] = tuple(flags["ts"])
    if out is not None:
        flags["out"] = out
    file_values = load_config_file(config_path) if config_path else {}
    try:
        cfg = merge_config(experiment, file_values, flags)
        if cfg.experiment != "curves" and cfg.model is None:
            cfg.model = str(assets.toy_model_path())
        if cfg.experiment != "curves" and cfg.dataset is None:
            cfg.dataset = str(assets.toy_dataset_path())
        record = run_experiment(cfg)
        out_base = cfg.out or f"{experiment.replace('-', '_')}_results"
        csv_path, json_path = write_results(record, out_base)
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"{experiment}: {len(record.rows)} rows in {record.wall_clock_s:.2f}s")
    click.echo(f"wrote {csv_path} and {json_path}")


@click.group()
def main():
    """Bit-flip fault injection experiments with weight-scaling hardening."""


@main.command()
@_common_options
def curves(config_path, out, **flags):
    """Monte Carlo absolute-error curves over the pseudo-weight grid."""
    flags.setdefault("bers", ())
    if not flags["bers"]:
        flags["bers"] = (0.1,)
    _run("curves", config_path, out, **flags)


@main.command(name="ber-sweep")
@_common_options
def ber_sweep(config_path, out, **flags):
    """Top-1 accuracy across the (BER, t) grid."""
    _run("ber-sweep", config_path, out, **flags)


@main.command(name="model-fault")
@_common_options
def model_fault(config_path, out, **flags):
    """Baseline versus optimal-t accuracy under faults."""
    _run("model-fault", config_path, out, **flags)


@main.command(name="logit-div")
@_common_options
def logit_div(config_path, out, **flags):
    """Per-weight rescale versus logit-division execution."""
    _run("logit-div", config_path, out, **flags)


@main.command()
@click.option("--rounds", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=0, envvar="FLIPGUARD_SEED")
@click.option("--fp32-samples", type=int, default=1_000_000, show_default=True)
def verify(rounds, seed, fp32_samples):
    """Run the codec round-trip and oracle consistency checks."""
    failures = 0

    for spec in (QFIXED, FP16):
        report = roundtrip_check(spec)
        ok = report.passed
        failures += 0 if ok else 1
        click.echo(
            f"[{'PASS' if ok else 'FAIL'}] {spec.kind.value} round trip: "
            f"{report.checked}/{report.total} patterns "
            f"({report.nan_patterns} NaN payloads canonicalized)"
        )
    report = roundtrip_check(FP32, sample_size=fp32_samples, seed=seed)
    ok = report.passed
    failures += 0 if ok else 1
    click.echo(
        f"[{'PASS' if ok else 'FAIL'}] fp32 round trip: "
        f"{report.checked}/{report.total} sampled patterns "
        f"({report.nan_patterns} NaN payloads canonicalized)"
    )

    study = CurveStudyConfig(
        grid_min=-0.5,
        grid_max=0.5,
        grid_step=0.25,
        ber=0.1,
        rounds=rounds,
        constants=(1.0, 2.0, 3.0),
        spec=QFIXED,
        protection=Protection.NONE,
        seed=seed,
    )
    oracle = compare_oracle(study)
    ok = oracle.passed
    failures += 0 if ok else 1
    worst = max(
        abs(r.monte_carlo_mean - r.exact_mean) for r in oracle.rows
    )
    click.echo(
        f"[{'PASS' if ok else 'FAIL'}] q2.5 Monte Carlo vs exact oracle: "
        f"{len(oracle.rows)} cells, worst gap {worst:.3e}"
    )

    if failures:
        click.echo(f"error: {failures} verification check(s) failed", err=True)
        sys.exit(1)
    click.echo("all verification checks passed")


if __name__ == "__main__":
    main()
