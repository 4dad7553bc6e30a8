"""Differentiable building blocks over numcore tensors.

Every function takes a name -> Tensor mapping ``P`` and a parameter prefix.
Inputs are (B, T, D) batches.
"""

from __future__ import annotations

import numpy as np

from .. import numcore as nc


def ln(P, prefix, x):
    return nc.layer_norm(x, P[f"{prefix}.g"], P[f"{prefix}.b"])


def lin(P, prefix, x):
    b = P.get(f"{prefix}.b")
    return nc.linear(x, P[f"{prefix}.w"], b)


def feed_forward(P, prefix, x):
    h = ln(P, f"{prefix}.ln", x)
    h = nc.swish(lin(P, f"{prefix}.w1", h))
    return lin(P, f"{prefix}.w2", h)


def conv_module(P, prefix, x):
    h = ln(P, f"{prefix}.ln", x)
    h = nc.glu(lin(P, f"{prefix}.pw1", h))
    h = nc.causal_conv1d(h, P[f"{prefix}.dw"])
    h = nc.swish(ln(P, f"{prefix}.norm", h))
    return lin(P, f"{prefix}.pw2", h)


def self_attention(P, prefix, x, heads, left_context):
    d = x.shape[-1]
    h = ln(P, f"{prefix}.ln", x)
    qkv = lin(P, f"{prefix}.qkv", h)
    q = qkv[..., :d]
    k = qkv[..., d : 2 * d]
    v = qkv[..., 2 * d :]
    return lin(P, f"{prefix}.out", nc.causal_attention(q, k, v, heads, left_context))


def conformer(P, prefix, x, heads, left_context):
    """Half-step FF, causal convolution, causal self-attention, half-step FF, LN."""
    x = x + 0.5 * feed_forward(P, f"{prefix}.ff1", x)
    x = x + conv_module(P, f"{prefix}.conv", x)
    x = x + self_attention(P, f"{prefix}.attn", x, heads, left_context)
    x = x + 0.5 * feed_forward(P, f"{prefix}.ff2", x)
    return ln(P, f"{prefix}.ln", x)


def lstm_cell(P, prefix, x, h, c):
    """x (B, n_in), h/c (B, H); gate order input, forget, cell, output."""
    H = h.shape[-1]
    z = lin(P, prefix, nc.concat([x, h], axis=-1))
    i = nc.sigmoid(z[..., :H])
    f = nc.sigmoid(z[..., H : 2 * H])
    g = nc.tanh(z[..., 2 * H : 3 * H])
    o = nc.sigmoid(z[..., 3 * H :])
    c = f * c + i * g
    return o * nc.tanh(c), c


def lstm_stack(P, prefixes, x, hidden):
    """Run stacked LSTM layers over a (B, T, n_in) sequence; returns (B, T, hidden)."""
    B, T = x.shape[0], x.shape[1]
    states = [(nc.Tensor(np.zeros((B, hidden))), nc.Tensor(np.zeros((B, hidden)))) for _ in prefixes]
    outs = []
    for t in range(T):
        inp = x[:, t, :]
        for li, prefix in enumerate(prefixes):
            h, c = lstm_cell(P, prefix, inp, *states[li])
            states[li] = (h, c)
            inp = h
        outs.append(inp.reshape(B, 1, hidden))
    return nc.concat(outs, axis=1)
