"""Adam with bias correction, warmup/inverse-sqrt learning rate, weight EMA."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, NonFiniteError


@dataclass
class OptimizerConfig:
    """Desk-scale defaults. ``production()`` holds the production values
    (peak 1.8e-3, 32K warm-up steps, batch 4096)."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    peak_lr: float = 5e-3
    warmup_steps: int = 100
    ema_decay: float = 0.99
    batch_size: int = 8
    max_steps: int = 300
    seed: int = 0

    def __post_init__(self):
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1)")
        if self.warmup_steps < 1:
            raise ContractViolation("warmup_steps must be >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ContractViolation("ema_decay must lie in [0, 1)")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ContractViolation("batch_size must be >= 1 and max_steps >= 0")
        if self.peak_lr <= 0 or self.epsilon <= 0:
            raise ContractViolation("peak_lr and epsilon must be positive")

    @classmethod
    def production(cls, **overrides):
        base = dict(peak_lr=1.8e-3, warmup_steps=32_000, batch_size=4096, ema_decay=0.9999)
        base.update(overrides)
        return cls(**base)


def lr_schedule(step, cfg):
    """peak * min(step / W, sqrt(W / step)); step counts from 1."""
    if step < 1:
        raise ContractViolation("learning-rate schedule is defined for step >= 1")
    W = cfg.warmup_steps
    return cfg.peak_lr * min(step / W, math.sqrt(W / step))


@dataclass
class TrainState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    shadow: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, cfg):
    """In-place bias-corrected Adam on the arrays in ``params``.

    Only names present in ``grads`` are updated. A non-finite gradient aborts
    before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise ContractViolation(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ContractViolation(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name!r}", name)
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return params, state


def ema_update(shadow, params, decay):
    """shadow <- decay * shadow + (1 - decay) * params, per name."""
    if not 0.0 <= decay < 1.0:
        raise ContractViolation("EMA decay must lie in [0, 1)")
    for name, p in params.items():
        s = shadow.get(name)
        if s is None:
            shadow[name] = np.array(p, dtype=np.float64)
            continue
        if s.shape != p.shape:
            raise ContractViolation(f"EMA shape mismatch for {name!r}")
        s *= decay
        s += (1.0 - decay) * p
    return shadow


def ema_decay_at(step, decay):
    """Decay ramp (1 + t) / (10 + t), capped at ``decay``, so early averages are not dominated by the initialisation."""
    return min(decay, (1.0 + step) / (10.0 + step))
