"""Plain numpy kernels shared by the autodiff ops and the streaming encoder.

Streaming inference computes one frame at a time, the offline path computes
a whole utterance at once. Both call the functions below so that, under
``no_grad``, they execute the same floating point operations per element.
The ``stable_*`` variants never use BLAS and reduce in a fixed sequential
order, which makes every output row independent of the number of rows.
"""

import numpy as np
from scipy.special import expit

LN_EPS = 1e-6


def sigmoid(x):
    return expit(x)


def swish(x):
    return x * expit(x)


def stable_matmul(a, b):
    """``a @ b`` for ``a (..., k)`` and ``b (k, n)`` with a fixed summation order."""
    out = a[..., 0:1] * b[0]
    for i in range(1, b.shape[0]):
        out += a[..., i : i + 1] * b[i]
    return out


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Returns (y, xhat, inv_std) normalising over the last axis."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv


def layer_norm_backward(g, xhat, inv, gain):
    gxhat = g * gain
    n = xhat.shape[-1]
    gx = inv * (gxhat - gxhat.sum(-1, keepdims=True) / n - xhat * (gxhat * xhat).sum(-1, keepdims=True) / n)
    red = tuple(range(g.ndim - 1))
    return gx, (g * xhat).sum(axis=red), g.sum(axis=red)


def log_softmax(x):
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def causal_conv(x, w):
    """Depthwise causal convolution over axis -2: y[t] = sum_k w[k] * x[t-k]."""
    y = x * w[0]
    T = x.shape[-2]
    for k in range(1, min(w.shape[0], T)):
        y[..., k:, :] += x[..., : T - k, :] * w[k]
    return y


def causal_conv_backward(g, x, w):
    T = x.shape[-2]
    gx = g * w[0]
    red = tuple(range(x.ndim - 1))
    gw = np.zeros_like(w)
    gw[0] = (g * x).sum(axis=red)
    for k in range(1, min(w.shape[0], T)):
        gx[..., : T - k, :] += g[..., k:, :] * w[k]
        gw[k] = (g[..., k:, :] * x[..., : T - k, :]).sum(axis=red)
    return gx, gw


def attention_mask(T, left_context):
    """Boolean (T, T) mask, True where query t may attend to key j."""
    t = np.arange(T)[:, None]
    j = np.arange(T)[None, :]
    ok = j <= t
    if left_context is not None:
        ok &= (t - j) <= left_context
    return ok


def attention_blas(q, k, v, mask):
    """q, k, v: (B, H, T, dh). Returns (out, weights)."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = np.matmul(q, np.swapaxes(k, -1, -2)) * scale
    s = np.where(mask, s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    w = e / e.sum(axis=-1, keepdims=True)
    return np.matmul(w, v), w


def attention_backward(g, q, k, v, w):
    scale = 1.0 / np.sqrt(q.shape[-1])
    gw = np.matmul(g, np.swapaxes(v, -1, -2))
    gs = w * (gw - (w * gw).sum(axis=-1, keepdims=True))
    gq = np.matmul(gs, k) * scale
    gk = np.matmul(np.swapaxes(gs, -1, -2), q) * scale
    gv = np.matmul(np.swapaxes(w, -1, -2), g)
    return gq, gk, gv


def attention_stable(q, k, v, mask):
    """Sequential-order attention; q (B, H, Tq, dh), k/v (B, H, Tk, dh), mask (Tq, Tk).

    Masked keys contribute exact zeros to every running sum, so the result for
    a query equals the result computed over its visible keys alone.
    """
    dh = q.shape[-1]
    scale = 1.0 / np.sqrt(dh)
    s = q[..., :, None, 0] * k[..., None, :, 0]
    for d in range(1, dh):
        s += q[..., :, None, d] * k[..., None, :, d]
    s = s * scale
    s = np.where(mask, s, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    Tk = k.shape[-2]
    denom = np.zeros(e.shape[:-1])
    for j in range(Tk):
        denom += e[..., j]
    w = e / denom[..., None]
    out = np.zeros(q.shape)
    for j in range(Tk):
        out += w[..., j, None] * v[..., j, None, :]
    return out


def lstm_cell(x, h, c, w, b, matmul=np.matmul):
    """One LSTM step with gate order (input, forget, cell, output)."""
    z = matmul(np.concatenate([x, h], axis=-1), w) + b
    H = h.shape[-1]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c = f * c + i * g
    return o * np.tanh(c), c
