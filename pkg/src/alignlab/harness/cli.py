"""Command-line entry point.

Commands: train, sweep, align, gen-data, reproduce. Flags override config
file keys, which override built-in defaults.
"""

import json
import sys
from pathlib import Path

import click

from ..tasks import export_arrays, gen_add_task, gen_synthetic_classification
from .config import ExperimentConfig, load_config
from .reproduce import ensure_idx_dataset, reproduce
from .runner import rescore_run, run
from .sweep import sweep


def _load(config_path) -> ExperimentConfig:
    if config_path:
        return load_config(config_path)
    return ExperimentConfig()


_OVERRIDES = [
    click.option("--rule", default=None, help="Learning rule."),
    click.option("--width", type=int, default=None, help="Network width."),
    click.option("--lr", type=float, default=None, help="Learning rate."),
    click.option("--seed", type=int, default=None, help="Random seed."),
    click.option("--epochs", type=int, default=None, help="Training epochs."),
    click.option("--out", "out_dir", default=None, help="Output directory."),
]


def _with_overrides(fn):
    for opt in reversed(_OVERRIDES):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Train networks with alignment-style learning rules and measure
    input-weight alignment."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON config file.")
@_with_overrides
def train(config_path, rule, width, lr, seed, epochs, out_dir):
    """Run a single training experiment and write metrics.csv."""
    cfg = _load(config_path).replace(rule=rule, width=width, lr=lr,
                                     seed=seed, epochs=epochs,
                                     out_dir=out_dir)
    result = run(cfg)
    click.echo(f"metrics: {result.metrics_path}")
    if result.diverged:
        click.echo("training diverged", err=True)
        sys.exit(1)


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON config file.")
@click.option("--axis", type=click.Choice(["width", "lr"]), required=True)
@click.option("--values", required=True,
              help="Comma-separated axis values, e.g. 32,128,512.")
@click.option("--seeds", default="0", help="Comma-separated seeds.")
@_with_overrides
def sweep_cmd(config_path, axis, values, seeds, rule, width, lr, seed,
              epochs, out_dir):
    """Run one training per (axis value, seed) and aggregate."""
    cfg = _load(config_path).replace(rule=rule, width=width, lr=lr,
                                     seed=seed, epochs=epochs,
                                     out_dir=out_dir)
    cast = int if axis == "width" else float
    vals = [cast(v) for v in values.split(",")]
    seed_list = [int(s) for s in seeds.split(",")]
    out = sweep(cfg, axis, vals, seed_list)
    click.echo(f"aggregate: {out}")


@main.command()
@click.option("--run-dir", type=click.Path(exists=True), required=True,
              help="Directory of a finished run with companion weights.")
@click.option("--probes", type=int, default=0,
              help="Gaussian probes; 0 computes the dense score.")
def align(run_dir, probes):
    """Recompute per-layer alignment scores for a finished run."""
    scores = rescore_run(run_dir, probes)
    click.echo(json.dumps(scores, indent=2))


@main.command("gen-data")
@click.option("--task", type=click.Choice(["add", "synth", "idx"]),
              required=True)
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--seed", type=int, default=0)
@click.option("--n", type=int, default=None, help="Dataset size.")
def gen_data(task, out_dir, seed, n):
    """Generate a dataset on disk (float64 export or IDX files)."""
    out = Path(out_dir)
    if task == "add":
        ds = gen_add_task(n or 300, (n or 300) // 3, seed=seed)
        path = export_arrays(out, "add", x_train=ds.x_train,
                             y_train=ds.y_train, x_test=ds.x_test,
                             y_test=ds.y_test)
    elif task == "synth":
        ds = gen_synthetic_classification(n or 1000, 16, seed=seed)
        path = export_arrays(out, "synth", x=ds.x, y=ds.y,
                             labels=ds.labels.astype(float))
    else:
        img, lab = ensure_idx_dataset(out, n=n or 12000, seed=seed)
        path = img
    click.echo(f"wrote: {path}")


@main.command("reproduce")
@click.option("--preset", required=True,
              help="add-table | add-table-smoke | align-width | rule-compare")
@click.option("--out", "out_dir", default="runs/reproduce",
              help="Output directory.")
def reproduce_cmd(preset, out_dir):
    """Run a pinned reproduction preset and report pass/fail."""
    report = reproduce(preset, Path(out_dir) / preset)
    click.echo(json.dumps(report, indent=2))
    if not report["passed"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
