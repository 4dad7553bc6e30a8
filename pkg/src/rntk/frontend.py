"""Feature pipeline: global normalisation, frame stacking, SpecAugment, LID one-hot.

Frames are (T, d) float arrays on a 10 ms clock. The model consumes frames
stacked three at a time (30 ms).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

STD_FLOOR = 1e-8
RAW_FRAME_MS = 10
STACK_FACTOR = 3


@dataclass
class FeatureStats:
    """Pooled per-dimension mean and (population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ContractViolation("mean and std must be 1-D vectors of equal length")

    @property
    def dim(self):
        return self.mean.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), 0)


@dataclass
class AugmentConfig:
    """Desk-scale defaults are light: a 4-frame token must survive a time mask."""

    num_freq_masks: int = 1
    max_freq_mask_width: int = 1
    num_time_masks: int = 1
    max_time_mask_width: int = 2
    enabled: bool = True

    def __post_init__(self):
        for name in ("num_freq_masks", "max_freq_mask_width", "num_time_masks", "max_time_mask_width"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be non-negative")

    @classmethod
    def production(cls):
        """Production setting: two 27-wide frequency masks, two 50-frame time masks (80-dim input)."""
        return cls(num_freq_masks=2, max_freq_mask_width=27, num_time_masks=2, max_time_mask_width=50)


def _frames_of(item):
    return item.frames if hasattr(item, "frames") else np.asarray(item)


def compute_global_stats(dataset):
    """Exact pooled statistics over every frame of every record (two passes).

    ``dataset`` may be any re-iterable of UtteranceRecords or (T, d) arrays.
    """
    total = None
    count = 0
    for item in dataset:
        f = np.asarray(_frames_of(item), dtype=np.float64)
        total = f.sum(axis=0) if total is None else total + f.sum(axis=0)
        count += f.shape[0]
    if count == 0:
        raise ContractViolation("cannot compute statistics of an empty dataset")
    mean = total / count
    sq = np.zeros_like(mean)
    for item in dataset:
        f = np.asarray(_frames_of(item), dtype=np.float64)
        sq += ((f - mean) ** 2).sum(axis=0)
    return FeatureStats(mean, np.sqrt(sq / count), count)


def normalize(frames, stats):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != stats.dim:
        raise ContractViolation(f"frame width {frames.shape[-1]} != stats width {stats.dim}")
    return (frames - stats.mean) / stats.std


def denormalize(frames, stats):
    return np.asarray(frames) * stats.std + stats.mean


def stack_and_subsample(frames, factor=STACK_FACTOR):
    """Concatenate ``factor`` consecutive frames; the tail is zero-padded.

    Output frame i is concat(x[f*i], ..., x[f*i + f - 1]) and lasts
    ``factor * 10`` ms.
    """
    frames = np.asarray(frames)
    T, d = frames.shape
    if T < 1:
        raise ContractViolation("need at least one frame to stack")
    n = math.ceil(T / factor)
    padded = np.zeros((n * factor, d), dtype=frames.dtype)
    padded[:T] = frames
    return padded.reshape(n, factor * d)


def unstack(stacked, factor=STACK_FACTOR):
    n, w = stacked.shape
    return stacked.reshape(n * factor, w // factor)


def stacked_frame_ms(factor=STACK_FACTOR):
    return RAW_FRAME_MS * factor


def stack_labels(labels, factor=STACK_FACTOR):
    """Endpointer labels on the stacked clock.

    A stacked frame is speech (0) if any constituent is speech, otherwise it
    takes the label of its last real constituent. Padding counts as final
    silence.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = math.ceil(len(labels) / factor)
    padded = np.full(n * factor, 3, dtype=np.int64)
    padded[: len(labels)] = labels
    groups = padded.reshape(n, factor)
    last_real = np.minimum((np.arange(n) + 1) * factor, len(labels)) - 1 - np.arange(n) * factor
    out = groups[np.arange(n), last_real]
    out[(groups == 0).any(axis=1)] = 0
    return out


def raw_clock(stacked_index, factor=STACK_FACTOR):
    """Number of raw 10 ms frames consumed once stacked frame ``stacked_index`` is complete."""
    return (stacked_index + 1) * factor


def spec_augment(frames, cfg, rng):
    """Zero out random frequency bands and time spans (applied after normalisation)."""
    frames = np.asarray(frames)
    if not cfg.enabled:
        return frames
    out = frames.copy()
    T, d = out.shape
    for _ in range(cfg.num_freq_masks):
        width = int(rng.integers(0, min(cfg.max_freq_mask_width, d) + 1))
        if width:
            start = int(rng.integers(0, d - width + 1))
            out[:, start : start + width] = 0.0
    for _ in range(cfg.num_time_masks):
        width = int(rng.integers(0, min(cfg.max_time_mask_width, T) + 1))
        if width:
            start = int(rng.integers(0, T - width + 1))
            out[start : start + width, :] = 0.0
    return out


def concat_lid(frames, language_index, num_languages):
    """Append the same one-hot language vector to every frame."""
    if not 0 <= language_index < num_languages:
        raise ContractViolation(f"language index {language_index} outside [0, {num_languages})")
    frames = np.asarray(frames)
    onehot = np.zeros((frames.shape[0], num_languages), dtype=frames.dtype)
    onehot[:, language_index] = 1.0
    return np.concatenate([frames, onehot], axis=1)


def language_index(tag):
    """Integer language id from a single-language tag such as "L1" (None if mixed)."""
    if "+" in tag or not tag.startswith("L"):
        return None
    return int(tag[1:])


def featurize(frames, stats, augment=None, rng=None, lid=None, num_languages=0):
    """Raw 10 ms frames to model input: normalise, optionally mask, stack x3, optionally append LID."""
    x = normalize(frames, stats)
    if augment is not None and augment.enabled:
        if rng is None:
            raise ContractViolation("augmentation needs an rng")
        x = spec_augment(x, augment, rng)
    x = stack_and_subsample(x)
    if num_languages:
        if lid is None:
            raise ContractViolation("LID-conditioned model needs a language index")
        x = concat_lid(x, lid, num_languages)
    return x
