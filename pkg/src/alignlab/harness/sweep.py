"""Axis sweeps: one run per (value, seed), then a serial aggregation pass.

The aggregate CSV has one row per axis value with mean/stdev of best test
loss and best test accuracy over seeds. Worker parallelism is capped by the
ALIGNLAB_THREADS environment variable (default 1 for bit-stable output).
"""

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .runner import RunResult, run

AXES = ("width", "lr")

AGG_COLUMNS = ("axis", "value", "seeds", "mean_test_loss", "std_test_loss",
               "mean_test_accuracy", "std_test_accuracy", "diverged")


def _workers() -> int:
    return max(1, int(os.environ.get("ALIGNLAB_THREADS", "1")))


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence,
          seeds: Sequence[int] = (0,)) -> Path:
    if axis not in AXES:
        raise ValueError(f"sweep axis must be one of {AXES}")
    if len(values) < 2:
        raise ValueError("a sweep needs at least two values")
    base = Path(cfg.out_dir)
    base.mkdir(parents=True, exist_ok=True)

    jobs = []
    for value in values:
        for seed in seeds:
            sub = base / f"{axis}-{value}-seed-{seed}"
            jobs.append(cfg.replace(**{axis: value}, seed=seed,
                                    out_dir=str(sub)))
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        results = list(pool.map(run, jobs))

    out = base / "sweep.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGG_COLUMNS)
        i = 0
        for value in values:
            batch: list[RunResult] = results[i:i + len(seeds)]
            i += len(seeds)
            losses = [r.best_test_loss for r in batch if not r.diverged]
            accs = [r.best_test_accuracy for r in batch
                    if not r.diverged and r.best_test_accuracy is not None]
            writer.writerow([
                axis, value, len(seeds),
                repr(float(np.mean(losses))) if losses else "",
                repr(float(np.std(losses))) if losses else "",
                repr(float(np.mean(accs))) if accs else "",
                repr(float(np.std(accs))) if accs else "",
                sum(r.diverged for r in batch)])
    return out
