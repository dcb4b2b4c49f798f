"""Optimisation, training loop, checkpoints and evaluation metrics."""
from .checkpoint import CheckpointError, checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig
from .evaluate import EvalResult, EvalSet, evaluate, heldout_set, translate_set
from .metrics import (
    extract_patches,
    position_cosine,
    semantic_consistency,
    sliced_wasserstein,
    style_similarity,
    swd,
)
from .optim import Adam, AdamState, adam_step
from .train import TrainState, format_log_line, smoothed, train, train_step, training_dataset

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "ConfigError",
    "EvalResult",
    "EvalSet",
    "TrainConfig",
    "TrainState",
    "adam_step",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
    "evaluate",
    "extract_patches",
    "format_log_line",
    "heldout_set",
    "load_checkpoint",
    "position_cosine",
    "save_checkpoint",
    "semantic_consistency",
    "sliced_wasserstein",
    "smoothed",
    "style_similarity",
    "swd",
    "train",
    "train_step",
    "training_dataset",
]
