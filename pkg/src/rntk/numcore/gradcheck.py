"""Central finite-difference oracle for gradient verification."""

import numpy as np

from .tensor import Tensor


def relative_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(fn, tensor, h=1e-5, indices=None):
    """d fn() / d tensor by central differences.

    Args:
        fn: zero-argument callable returning a scalar Tensor (or float).
        tensor: the Tensor whose data is perturbed in place.
        indices: optional iterable of flat indices; other entries stay 0.
    """
    flat = tensor.data.reshape(-1)
    out = np.zeros(flat.size)
    todo = range(flat.size) if indices is None else indices
    for i in todo:
        orig = flat[i]
        flat[i] = orig + h
        fp = _value(fn())
        flat[i] = orig - h
        fm = _value(fn())
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(tensor.shape)


def _value(x):
    return float(x.data) if isinstance(x, Tensor) else float(x)


def check_gradients(fn, tensors, h=1e-5, max_entries=None, rng=None):
    """Compare backward() against finite differences for each tensor.

    Returns the worst norm-wise relative error. With ``max_entries`` only a
    random subset of entries per tensor is compared.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        if max_entries is not None and t.size > max_entries:
            idx = rng.choice(t.size, size=max_entries, replace=False)
            numeric = numeric_grad(fn, t, h, idx).ravel()[idx]
            analytic = analytic.ravel()[idx]
        else:
            numeric = numeric_grad(fn, t, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
