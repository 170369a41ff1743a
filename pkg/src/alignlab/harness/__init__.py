from .config import ExperimentConfig, load_config, save_config
from .runner import RunResult, run
from .sweep import sweep
from .reproduce import PRESETS, reproduce

__all__ = ["ExperimentConfig", "load_config", "save_config", "RunResult",
           "run", "sweep", "PRESETS", "reproduce"]
