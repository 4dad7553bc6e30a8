"""Optimisers and the three training phases."""

from .loops import (
    TrainLog,
    endpointer_logits,
    final_silence_accuracy_of,
    pad_sequences,
    pad_tokens,
    read_log,
    recognition_logits,
    train_endpointer,
    train_stage1,
    train_stage2_eou,
)
from .optim import OptimizerConfig, TrainState, adam_step, ema_decay_at, ema_update, lr_schedule

__all__ = [
    "OptimizerConfig",
    "TrainLog",
    "TrainState",
    "adam_step",
    "ema_decay_at",
    "ema_update",
    "endpointer_logits",
    "final_silence_accuracy_of",
    "lr_schedule",
    "pad_sequences",
    "pad_tokens",
    "read_log",
    "recognition_logits",
    "train_endpointer",
    "train_stage1",
    "train_stage2_eou",
]
