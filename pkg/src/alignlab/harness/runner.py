"""Single experiment runs: build the dataset and trainer from a config,
train with per-epoch evaluation, stream metrics to CSV, and persist the
final/initial/companion weights for later alignment analysis.

CSV layout (header mandatory, one row per evaluation event):

    step,epoch,rule,width,lr,seed,train_loss,test_loss,test_accuracy,
    alignment_scores,wall_time_ms

`test_accuracy` and `alignment_scores` are empty when not applicable;
alignment scores are a JSON object mapping layer index to score. The file
ends with a completeness footer row whose step column is "footer" and whose
epoch column is "complete" or "diverged".
"""

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..alignment import (CompanionTracker, ZeroOperatorError,
                         alignment_score_dense, alignment_score_stochastic,
                         delta_operator, sigma_operator)
from ..network import cnn, mlp, snapshot
from ..rng import make_rng
from ..rnn import RNNSpec, RNNTrainer
from ..rules import TrainConfig, Trainer
from ..tasks import gen_add_task, gen_synthetic_classification, load_idx
from .config import ExperimentConfig, save_config

CSV_COLUMNS = ("step", "epoch", "rule", "width", "lr", "seed", "train_loss",
               "test_loss", "test_accuracy", "alignment_scores",
               "wall_time_ms")


@dataclass
class RunResult:
    config: ExperimentConfig
    run_dir: Path
    metrics_path: Path
    best_test_loss: float
    best_test_accuracy: Optional[float]
    final_alignment: Optional[dict]
    diverged: bool


def build_dataset(cfg: ExperimentConfig):
    """Returns (x_train, y_train, x_test, y_test) in the arch's layout."""
    if cfg.task == "add":
        ds = gen_add_task(cfg.n_train, cfg.n_test, cfg.seq_len, seed=cfg.seed)
        return ds.x_train, ds.y_train, ds.x_test, ds.y_test
    if cfg.task == "synth":
        ds = gen_synthetic_classification(cfg.n_train + cfg.n_test,
                                          cfg.input_dim, cfg.classes,
                                          cfg.margin, seed=cfg.seed)
        x, y = ds.x, ds.y
    else:  # idx
        tr = load_idx(cfg.idx_images, cfg.idx_labels, cfg.classes)
        if cfg.idx_test_images:
            te = load_idx(cfg.idx_test_images, cfg.idx_test_labels,
                          cfg.classes)
            x = np.concatenate([tr.x, te.x])
            y = np.concatenate([tr.y, te.y])
        else:
            x, y = tr.x, tr.y
        x, y = x[:cfg.n_train + cfg.n_test], y[:cfg.n_train + cfg.n_test]
    if cfg.arch == "cnn":
        if x.ndim == 2:
            side = int(round(np.sqrt(x.shape[1])))
            x = x.reshape(-1, 1, side, side)
        else:
            x = x[:, None, :, :]
    elif x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    return x[:cfg.n_train], y[:cfg.n_train], x[cfg.n_train:], y[cfg.n_train:]


def build_spec(cfg: ExperimentConfig, x: np.ndarray):
    if cfg.arch == "mlp":
        return mlp(x.shape[1], [cfg.width] * cfg.depth, cfg.classes,
                   cfg.activation)
    if cfg.arch == "cnn":
        return cnn(x.shape[2:], x.shape[1], [cfg.width] * cfg.depth,
                   [1] * cfg.depth, cfg.classes, cfg.activation)
    return RNNSpec(cfg.width, activation=cfg.activation)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _MetricsWriter:
    def __init__(self, path: Path, cfg: ExperimentConfig):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(CSV_COLUMNS)
        self.cfg = cfg
        self.t0 = time.monotonic()

    def row(self, step, epoch, train_loss, test_loss, test_accuracy,
            alignment):
        cfg = self.cfg
        wall = int(1000 * (time.monotonic() - self.t0))
        self.writer.writerow([
            _fmt(step), _fmt(epoch), cfg.rule, cfg.width, _fmt(cfg.lr),
            cfg.seed, _fmt(train_loss), _fmt(test_loss), _fmt(test_accuracy),
            json.dumps(alignment) if alignment is not None else "",
            wall])
        self.fh.flush()

    def close(self):
        self.fh.close()


def _measure_alignment(cfg, spec, trainer, tracker):
    layers = cfg.align_layers or tuple(range(spec.depth))
    scores = {}
    rng = make_rng(cfg.seed, 3)
    for layer in layers:
        d = delta_operator(trainer.params, trainer.params0, layer)
        s = sigma_operator(tracker.state, trainer.params0, spec, layer)
        try:
            if cfg.probes > 0:
                scores[str(layer)] = alignment_score_stochastic(
                    d, s, cfg.probes, rng).score
            else:
                scores[str(layer)] = alignment_score_dense(d, s)
        except ZeroOperatorError:
            scores[str(layer)] = None
    return scores


def run(cfg: ExperimentConfig) -> RunResult:
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.json")
    x_tr, y_tr, x_te, y_te = build_dataset(cfg)
    spec = build_spec(cfg, x_tr)

    if cfg.arch == "rnn":
        return _run_rnn(cfg, run_dir, spec, x_tr, y_tr, x_te, y_te)

    tcfg = TrainConfig(lr=cfg.lr, batch_size=min(cfg.batch_size,
                                                 x_tr.shape[0]),
                       epochs=cfg.epochs, rule=cfg.rule, seed=cfg.seed)
    trainer = Trainer(spec, tcfg, x_tr, y_tr,
                      cache_init=spec.is_dense)
    tracker = None
    if cfg.companion:
        if not spec.is_dense:
            raise ValueError("companion tracking requires a dense network")
        snap = snapshot(trainer.params0, spec, x_tr, with_jacobians=False)
        tracker = CompanionTracker(snap, cfg.lr)
        trainer.on_step = tracker

    writer = _MetricsWriter(run_dir / "metrics.csv", cfg)
    diverged = False
    best_loss, best_acc = np.inf, None
    alignment = None
    try:
        train_loss, _ = trainer.evaluate(x_tr, y_tr)
        test_loss, test_acc = trainer.evaluate(x_te, y_te)
        best_loss, best_acc = test_loss, test_acc
        writer.row(0, 0, train_loss, test_loss, test_acc, None)
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            try:
                train_loss = trainer.run_epoch()
            except FloatingPointError:
                diverged = True
                break
            step = trainer.state.step
            if not np.isfinite(train_loss):
                diverged = True
                break
            test_loss, test_acc = trainer.evaluate(x_te, y_te)
            best_loss = min(best_loss, test_loss)
            best_acc = max(best_acc, test_acc)
            alignment = None
            if tracker is not None and (epoch % cfg.measure_every == 0
                                        or epoch == cfg.epochs):
                alignment = _measure_alignment(cfg, spec, trainer, tracker)
            writer.row(step, epoch, train_loss, test_loss, test_acc,
                       alignment)
        writer.row("footer", "diverged" if diverged else "complete",
                   train_loss, best_loss, best_acc, alignment)
    finally:
        writer.close()

    state = {"t": trainer.state.step}
    arrays = {}
    for i, (w, w0) in enumerate(zip(trainer.params.weights,
                                    trainer.params0.weights)):
        arrays[f"w{i}"] = w
        arrays[f"w0_{i}"] = w0
        if tracker is not None:
            arrays[f"wstar{i}"] = tracker.state.w_star[i]
    np.savez(run_dir / "state.npz", **arrays)
    (run_dir / "state.json").write_text(json.dumps(state))
    return RunResult(cfg, run_dir, run_dir / "metrics.csv", best_loss,
                     best_acc, alignment, diverged)


def _run_rnn(cfg, run_dir, spec, x_tr, y_tr, x_te, y_te):
    trainer = RNNTrainer(spec, cfg.rule, cfg.lr,
                         min(cfg.batch_size, x_tr.shape[0]), cfg.seed,
                         x_tr, y_tr)
    writer = _MetricsWriter(run_dir / "metrics.csv", cfg)
    diverged = False
    best_loss = np.inf
    train_loss = trainer.evaluate(x_tr, y_tr)
    test_loss = trainer.evaluate(x_te, y_te)
    best_loss = test_loss
    try:
        writer.row(0, 0, train_loss, test_loss, None, None)
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            try:
                train_loss = trainer.run_epoch()
            except FloatingPointError:
                diverged = True
                break
            step = trainer.params.t
            if not np.isfinite(train_loss):
                diverged = True
                break
            test_loss = trainer.evaluate(x_te, y_te)
            best_loss = min(best_loss, test_loss)
            writer.row(step, epoch, train_loss, test_loss, None, None)
        writer.row("footer", "diverged" if diverged else "complete",
                   train_loss, best_loss, None, None)
    finally:
        writer.close()
    np.savez(run_dir / "state.npz", w_h=trainer.params.w_h,
             w_i=trainer.params.w_i, w_o=trainer.params.w_o)
    return RunResult(cfg, run_dir, run_dir / "metrics.csv", best_loss,
                     None, None, diverged)


def rescore_run(run_dir, probes: int, seed: int = 0) -> dict:
    """Recompute per-layer alignment scores from a finished run's persisted
    weights (the `align` CLI command)."""
    from .config import load_config
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.json")
    if not cfg.companion:
        raise ValueError("run was recorded without companion weights")
    data = np.load(run_dir / "state.npz")
    x_tr, _, _, _ = build_dataset(cfg)
    spec = build_spec(cfg, x_tr)
    rng = make_rng(seed, 3)
    scores = {}
    for layer in cfg.align_layers or tuple(range(spec.depth)):
        from ..alignment import CorrelationOperator
        d = CorrelationOperator("delta", layer,
                                data[f"w{layer}"] - data[f"w0_{layer}"])
        s = CorrelationOperator("sigma", layer,
                                data[f"wstar{layer}"] - data[f"w0_{layer}"],
                                scale=float(spec.layers[layer].fan_in))
        if probes > 0:
            scores[str(layer)] = alignment_score_stochastic(d, s, probes,
                                                            rng).score
        else:
            scores[str(layer)] = alignment_score_dense(d, s)
    return scores
