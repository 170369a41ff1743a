"""Experiment configuration: a flat JSON document mapped onto a dataclass.

Precedence: defaults < config file < CLI flags. Unknown keys in a config
file are rejected rather than ignored, so typos fail loudly.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

from ..rules import RULE_KINDS

TASKS = ("add", "synth", "idx")
ARCHS = ("mlp", "cnn", "rnn")


@dataclass(frozen=True)
class ExperimentConfig:
    # task
    task: str = "synth"
    n_train: int = 1000
    n_test: int = 200
    input_dim: int = 16          # synth feature dimension
    classes: int = 10
    margin: float = 1.0
    seq_len: int = 100           # add-task sequence length
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None
    idx_test_images: Optional[str] = None
    idx_test_labels: Optional[str] = None

    # architecture
    arch: str = "mlp"
    width: int = 64              # hidden units (mlp/rnn) or channels (cnn)
    depth: int = 2               # hidden dense layers / conv layers
    activation: str = "relu"

    # optimization
    rule: str = "normal"
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0

    # alignment measurement
    companion: bool = False
    align_layers: Tuple[int, ...] = ()   # empty = every layer
    probes: int = 0                      # 0 = dense score
    measure_every: int = 10              # epochs between measurements

    out_dir: str = "runs/run"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.rule not in RULE_KINDS:
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch size")
        if self.task == "idx" and not (self.idx_images and self.idx_labels):
            raise ValueError("idx task needs idx_images and idx_labels paths")
        if self.task == "add" and self.arch != "rnn":
            raise ValueError("the add task runs on the rnn architecture")
        if self.arch == "rnn" and self.task != "add":
            raise ValueError("the rnn architecture runs on the add task")
        if self.measure_every < 1:
            raise ValueError("measure_every must be at least 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["align_layers"] = list(self.align_layers)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "align_layers" in changes:
            changes["align_layers"] = tuple(changes["align_layers"])
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - _FIELDS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "align_layers" in data:
        data = dict(data, align_layers=tuple(data["align_layers"]))
    return ExperimentConfig(**data)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
