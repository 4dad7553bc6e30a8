"""Differentiable primitives.

Every function takes Tensors (or array-likes, which are treated as
constants) and returns a Tensor whose backward closure is recorded when grad
mode is enabled.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from . import kernels
from .tensor import Tensor, is_grad_enabled, make_op


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    ad, bd = a.data, b.data
    return make_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b):
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


def neg(a):
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    ad = a.data
    return make_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a):
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    out = kernels.sigmoid(a.data)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    ad = a.data
    return make_op(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),), "relu")


def swish(a):
    """x * sigmoid(x), the feed-forward activation of the Conformer blocks."""
    ad = a.data
    s = kernels.sigmoid(ad)
    return make_op(ad * s, (a,), lambda g: (g * (s + ad * s * (1.0 - s)),), "swish")


def glu(a, axis=-1):
    """Gated linear unit: first half times sigmoid of the second half."""
    n = a.shape[axis]
    if n % 2:
        raise ContractViolation(f"glu needs an even extent on axis {axis}, got {n}")
    x1, x2 = np.split(a.data, 2, axis=axis)
    s = kernels.sigmoid(x2)

    def bw(g):
        return (np.concatenate([g * s, g * x1 * s * (1.0 - s)], axis=axis),)

    return make_op(x1 * s, (a,), bw, "glu")


# ---------------------------------------------------------------- reductions / shape


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    inv = None if axes is None else tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index):
    out = a.data[index]
    if out.size == 0:
        raise ContractViolation(f"indexing produced an empty tensor: {index!r}")
    shape, dtype = a.shape, a.dtype

    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_op(np.array(out, copy=True), (a,), bw, "getitem")


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def concat(tensors, axis=-1):
    """Concatenate along ``axis`` (the feature axis by default)."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def pad_time(a, before, after):
    """Zero-pad axis -2 (time)."""
    T = a.shape[-2]
    widths = [(0, 0)] * a.ndim
    widths[-2] = (before, after)
    return make_op(np.pad(a.data, widths), (a,), lambda g: (g[..., before : before + T, :],), "pad_time")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product ``a (..., m, k) @ b (k, n)`` or of two same-batch stacks.

    Under ``no_grad`` with a 2-D right operand the row-stable kernel is used.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2 and not is_grad_enabled():
        return make_op(kernels.stable_matmul(ad, bd), (a, b), None, "matmul")
    out = np.matmul(ad, bd)

    def bw(g):
        if bd.ndim == 2:
            a2 = ad.reshape(-1, ad.shape[-1])
            g2 = g.reshape(-1, bd.shape[-1])
            gb = a2.T @ g2
            ga = g @ bd.T
        else:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            gb = _unbroadcast(gb, bd.shape)
            ga = _unbroadcast(ga, ad.shape)
        return ga, gb

    return make_op(out, (a, b), bw, "matmul")


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------- normalisation / softmax


def log_softmax(a):
    """Row-wise log-softmax over the last axis, max-shifted for stability."""
    if a.shape[-1] < 1:
        raise ContractViolation("log_softmax needs a non-empty last axis")
    out = kernels.log_softmax(a.data)
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return make_op(out, (a,), bw, "log_softmax")


def layer_norm(x, gain, bias, eps=kernels.LN_EPS):
    """Per-frame normalisation over the feature axis with learned scale/offset."""
    y, xhat, inv = kernels.layer_norm(x.data, gain.data, bias.data, eps)
    gd = gain.data

    def bw(g):
        return kernels.layer_norm_backward(g, xhat, inv, gd)

    return make_op(y, (x, gain, bias), bw, "layer_norm")


def cross_entropy(logits, labels, ignore_index=-1):
    """Mean of -log softmax(logits)[label] over positions whose label != ignore_index."""
    labels = np.asarray(labels)
    C = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ContractViolation(f"labels shape {labels.shape} does not match logits {logits.shape}")
    valid = labels != ignore_index
    if np.any((labels[valid] < 0) | (labels[valid] >= C)):
        raise ContractViolation(f"labels must lie in [0, {C})")
    n = int(valid.sum())
    if n == 0:
        raise ContractViolation("cross_entropy has no labelled positions")
    lp = kernels.log_softmax(logits.data)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(lp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / n

    def bw(g):
        grad = np.exp(lp)
        np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], -1) - 1.0, -1)
        grad *= valid[..., None] * (g / n)
        return (grad,)

    return make_op(np.asarray(loss), (logits,), bw, "cross_entropy")


def embedding(table, indices):
    """Row lookup ``table[indices]``; gradients scatter-add back into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    N = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise ContractViolation(f"embedding index out of range [0, {N})")
    shape, dtype = table.shape, table.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return make_op(table.data[idx], (table,), bw, "embedding")


# ---------------------------------------------------------------- sequence primitives


def causal_conv1d(x, w):
    """Depthwise causal convolution: y[t, c] = sum_k w[k, c] * x[t - k, c].

    ``x`` is (..., T, C), ``w`` is (K, C); frames before 0 count as zeros.
    """
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] != x.shape[-1]:
        raise ContractViolation(f"kernel shape {w.shape} incompatible with input {x.shape}")
    xd, wd = x.data, w.data
    return make_op(kernels.causal_conv(xd, wd), (x, w), lambda g: kernels.causal_conv_backward(g, xd, wd), "causal_conv1d")


def causal_attention(q, k, v, num_heads, left_context=None):
    """Multi-head scaled dot-product self-attention with left-only visibility.

    q, k, v are (B, T, D). Query t sees keys j with t - left_context <= j <= t
    (all j <= t when left_context is None).
    """
    B, T, D = q.shape
    if k.shape != q.shape or v.shape != q.shape:
        raise ContractViolation("q, k, v must share a shape")
    if D % num_heads:
        raise ContractViolation(f"model dim {D} not divisible by {num_heads} heads")
    dh = D // num_heads

    def split(t):
        return t.reshape(B, T, num_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    mask = kernels.attention_mask(T, left_context)
    if not is_grad_enabled():
        out = kernels.attention_stable(qh, kh, vh, mask)
        return make_op(out.transpose(0, 2, 1, 3).reshape(B, T, D), (q, k, v), None, "attention")
    out, w = kernels.attention_blas(qh, kh, vh, mask)

    def bw(g):
        gh = g.reshape(B, T, num_heads, dh).transpose(0, 2, 1, 3)
        gq, gk, gv = kernels.attention_backward(gh, qh, kh, vh, w)
        merge = lambda t: t.transpose(0, 2, 1, 3).reshape(B, T, D)  # noqa: E731
        return merge(gq), merge(gk), merge(gv)

    return make_op(out.transpose(0, 2, 1, 3).reshape(B, T, D), (q, k, v), bw, "attention")
