"""The documented desk-scale experiment: data recipe, model size and budgets.

Shared by the command line, the demos and the acceptance suite so that all
three train and score the same toy system.
"""

from __future__ import annotations

import dataclasses

from .model import ModelConfig
from .synthdata import SilenceConfig, make_codeswitch_set, make_dataset, make_languages
from .training import OptimizerConfig

DATA = {
    "num_languages": 2,
    "tokens_per_language": 6,
    "feature_dim": 8,
    "template_frames": 6,
    "train_per_language": 1000,
    "dev_per_language": 100,
    "eval_per_language": 50,
    "codeswitch_eval": 40,
    "tokens_range": [1, 8],
    "codeswitch_segment_tokens": [2, 3],
    "noise_std": 0.3,
    "silence": {},
}

STAGE1_STEPS = 3000
EOU_STEPS = 1000
EP_STEPS = 600

# split name -> offset mixed into the data seed
SPLIT_OFFSETS = {"train": 1, "dev": 2, "eval": 3, "codeswitch_eval": 4}


def data_config(**overrides):
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in DATA.items()}
    cfg["silence"] = dict(DATA["silence"])
    cfg.update(overrides)
    return cfg


def silence_config(data):
    return SilenceConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in data["silence"].items()})


def languages(data, seed):
    return make_languages(data["num_languages"], data["tokens_per_language"], data["feature_dim"], seed, data["template_frames"])


def make_split(specs, data, split, seed):
    """One named split; every split draws from its own seed stream."""
    sil = silence_config(data)
    s = seed * 1000 + SPLIT_OFFSETS[split]
    if split == "codeswitch_eval":
        return make_codeswitch_set(
            specs, data["codeswitch_eval"], seed=s, silence_cfg=sil, noise_std=data["noise_std"],
            segment_tokens=tuple(data["codeswitch_segment_tokens"]),
        )
    n = data[f"{split}_per_language"]
    return make_dataset(
        specs, [n] * len(specs), seed=s, silence_cfg=sil, noise_std=data["noise_std"],
        tokens_range=tuple(data["tokens_range"]), prefix=split,
    )


def splits(seed=0, data=None):
    """(specs, {split: records}) for the toy corpus."""
    data = data or data_config()
    specs = languages(data, seed)
    return specs, {name: make_split(specs, data, name, seed) for name in SPLIT_OFFSETS}


def model_config(data=None, num_languages=0, **overrides):
    data = data or data_config()
    base = dict(
        input_dim=3 * data["feature_dim"] + num_languages,
        lid_dim=num_languages,
        vocab_size=data["num_languages"] * data["tokens_per_language"],
    )
    base.update(overrides)
    return ModelConfig(**base)


def stage1_optimizer(seed=0, **overrides):
    return dataclasses.replace(OptimizerConfig(max_steps=STAGE1_STEPS, seed=seed), **overrides)


def eou_optimizer(seed=0, **overrides):
    cfg = OptimizerConfig(max_steps=EOU_STEPS, peak_lr=3e-3, warmup_steps=50, seed=seed)
    return dataclasses.replace(cfg, **overrides)


def ep_optimizer(seed=0, **overrides):
    cfg = OptimizerConfig(max_steps=EP_STEPS, peak_lr=3e-3, warmup_steps=50, seed=seed)
    return dataclasses.replace(cfg, **overrides)
