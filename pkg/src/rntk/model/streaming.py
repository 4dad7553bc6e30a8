"""Frame-by-frame encoder with per-layer caches.

Each step consumes one stacked input frame and mirrors, operation for
operation, what the batched forward pass computes under ``no_grad``. The
shared kernels are row-stable, so the streamed activations are bitwise equal
to the offline ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation
from ..numcore.kernels import attention_stable, layer_norm, lstm_cell, stable_matmul, swish, sigmoid
from .params import block1_plan


def _ln(P, prefix, x):
    return layer_norm(x, P[f"{prefix}.g"], P[f"{prefix}.b"])[0]


def _lin(P, prefix, x):
    y = stable_matmul(x, P[f"{prefix}.w"])
    b = P.get(f"{prefix}.b")
    return y if b is None else y + b


class ConformerCache:
    """Past convolution inputs and attention keys/values of one layer."""

    def __init__(self, kernel, left_context):
        self.conv = []
        self.keys = None
        self.values = None
        self.kernel = kernel
        self.left_context = left_context

    def push_conv(self, h):
        self.conv.insert(0, h)
        del self.conv[self.kernel :]

    def push_kv(self, k, v):
        if self.keys is None:
            self.keys, self.values = k, v
        else:
            self.keys = np.concatenate([self.keys, k], axis=2)
            self.values = np.concatenate([self.values, v], axis=2)
        if self.left_context is not None and self.keys.shape[2] > self.left_context + 1:
            self.keys = self.keys[:, :, -(self.left_context + 1) :]
            self.values = self.values[:, :, -(self.left_context + 1) :]


def _ff(P, prefix, x):
    h = swish(_lin(P, f"{prefix}.w1", _ln(P, f"{prefix}.ln", x)))
    return _lin(P, f"{prefix}.w2", h)


def conformer_step(P, prefix, x, cache, heads):
    """One frame through a Conformer layer; x is (1, 1, D)."""
    x = x + 0.5 * _ff(P, f"{prefix}.ff1", x)

    h = _lin(P, f"{prefix}.conv.pw1", _ln(P, f"{prefix}.conv.ln", x))
    a, gate = np.split(h, 2, axis=-1)
    h = a * sigmoid(gate)
    cache.push_conv(h)
    w = P[f"{prefix}.conv.dw"]
    y = cache.conv[0] * w[0]
    for k in range(1, len(cache.conv)):
        y += cache.conv[k] * w[k]
    y = swish(_ln(P, f"{prefix}.conv.norm", y))
    x = x + _lin(P, f"{prefix}.conv.pw2", y)

    d = x.shape[-1]
    dh = d // heads
    qkv = _lin(P, f"{prefix}.attn.qkv", _ln(P, f"{prefix}.attn.ln", x))

    def split(t):
        return t.reshape(1, 1, heads, dh).transpose(0, 2, 1, 3)

    q = split(qkv[..., :d])
    cache.push_kv(split(qkv[..., d : 2 * d]), split(qkv[..., 2 * d :]))
    mask = np.ones((1, cache.keys.shape[2]), dtype=bool)
    att = attention_stable(q, cache.keys, cache.values, mask)
    x = x + _lin(P, f"{prefix}.attn.out", att.transpose(0, 2, 1, 3).reshape(1, 1, d))

    x = x + 0.5 * _ff(P, f"{prefix}.ff2", x)
    return _ln(P, f"{prefix}.ln", x)


@dataclass
class StepOutput:
    block0: np.ndarray
    ep_logits: np.ndarray
    encoder: np.ndarray | None


class EncoderStream:
    """Streaming encoder + endpointer over stacked frames.

    ``step(frame)`` returns the block-0 activation and endpointer logits for
    that frame, and an encoder output every second frame (when a block-1
    input pair completes).
    """

    def __init__(self, config, arrays):
        self.config = cfg = config.effective()
        self.P = arrays
        kc, lc = cfg.conv_kernel_size, cfg.attention_left_context
        self.block0 = [ConformerCache(kc, lc) for _ in range(cfg.block0_layers)]
        self.plan, self.out_width = block1_plan(cfg)
        self.block1 = [ConformerCache(kc, lc) for _ in self.plan]
        self.ep_cache = ConformerCache(kc, lc)
        self.ep_lstm = None
        self.pending = None
        self.frames = 0

    def _ep_step(self, h0, frame):
        cfg, P = self.config, self.P
        kind = cfg.ep_branch_kind
        if kind == "projection_only":
            return _lin(P, "ep.out", h0)
        if kind == "conformer_branch":
            h = _lin(P, "ep.proj", h0)
            h = conformer_step(P, "ep.conformer", h, self.ep_cache, cfg.ep_heads)
            return _ln(P, "ep.ln", _lin(P, "ep.out", h))
        x = frame if kind == "standalone_lstm" else _lin(P, "ep.proj", h0)
        x = x[:, 0, :]
        if self.ep_lstm is None:
            zero = np.zeros((1, cfg.ep_dim))
            self.ep_lstm = [(zero, zero) for _ in range(cfg.ep_lstm_layers)]
        for i in range(cfg.ep_lstm_layers):
            h, c = lstm_cell(x, *self.ep_lstm[i], P[f"ep.lstm{i}.w"], P[f"ep.lstm{i}.b"], matmul=stable_matmul)
            self.ep_lstm[i] = (h, c)
            x = h
        return _lin(P, "ep.out", x[:, None, :])

    def step(self, frame):
        cfg, P = self.config, self.P
        frame = np.asarray(frame, dtype=np.float64).reshape(1, 1, -1)
        if frame.shape[-1] != cfg.input_dim:
            raise ContractViolation(f"frame width {frame.shape[-1]} != input_dim {cfg.input_dim}")
        h = _lin(P, "encoder.input_proj", frame)
        for i, cache in enumerate(self.block0):
            h = conformer_step(P, f"encoder.block0.{i}", h, cache, cfg.attention_heads)
        ep = self._ep_step(h, frame)
        self.frames += 1
        enc = None
        if self.pending is None:
            self.pending = h
        else:
            x = np.concatenate([self.pending, h], axis=-1)
            self.pending = None
            for i, (w_in, w) in enumerate(self.plan):
                if w_in != w:
                    x = _lin(P, f"encoder.block1.proj{i}", x)
                x = conformer_step(P, f"encoder.block1.{i}", x, self.block1[i], cfg.attention_heads)
            if self.out_width != cfg.encoder_dim:
                x = _lin(P, "encoder.block1.out_proj", x)
            enc = _ln(P, "encoder.block1.ln", x)[0, 0]
        return StepOutput(h[0, 0], ep[0, 0], enc)
