"""Training orchestration: config, optimizer, loop, checkpoints, evals."""

from .checkpoint import load_archive, save_archive
from .config import TrainConfig, canonical_keys, load_config, parse_config_text
from .loop import (
    METRICS_HEADER,
    MetricsRow,
    TrainState,
    load_checkpoint,
    run_training,
    save_checkpoint,
    train_step,
)
from .model import TulipModel, decay_excluded
from .optim import AdamW, clip_global_norm, warmup_lr

__all__ = [
    "TrainConfig", "parse_config_text", "load_config", "canonical_keys",
    "TulipModel", "decay_excluded",
    "AdamW", "clip_global_norm", "warmup_lr",
    "save_archive", "load_archive",
    "TrainState", "train_step", "run_training",
    "save_checkpoint", "load_checkpoint", "MetricsRow", "METRICS_HEADER",
]
