"""Dense tensor with define-by-run reverse-mode differentiation."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ContractViolation, NonFiniteError

_local = threading.local()
_seq = itertools.count()


def is_grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread.

    Inside this context matmul and attention also switch to row-stable
    kernels, so the outputs for a given time step do not depend on how many
    later steps are present. Streaming inference relies on this.
    """
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def _as_float_array(data, dtype):
    if isinstance(data, Tensor):
        data = data.data
    if dtype is not None:
        return np.array(data, dtype=dtype)
    arr = np.asarray(data)
    if arr.dtype == np.float32 or arr.dtype == np.float64:
        return arr
    return arr.astype(np.float64)


class Tensor:
    """A float array that can take part in gradient computation.

    Args:
        data: array-like payload. Float32 arrays keep their precision;
            everything else becomes float64.
        requires_grad: whether gradients should be accumulated into ``grad``.
        dtype: optional explicit dtype.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        if any(n <= 0 for n in self.data.shape):
            raise ContractViolation(f"tensor extents must be positive, got {self.data.shape}")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = -1
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def validate(self, name="tensor"):
        """Raise NonFiniteError if the payload (or grad) holds NaN/Inf."""
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{name}: non-finite values in data", name=name)
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NonFiniteError(f"{name}: non-finite values in grad", name=name)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ContractViolation(f"{name}: grad shape {self.grad.shape} != {self.data.shape}")

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; implementations live in ops.py.
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, index):
        return _ops().getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)


def _ops():
    from . import ops

    return ops


def make_op(data, parents, backward_fn, op="op"):
    """Wrap a freshly computed array as the output of a primitive.

    ``backward_fn(grad_out)`` must return one gradient (or None) per parent.
    The node is only recorded when grad mode is on and some parent needs a
    gradient; otherwise a plain constant tensor is returned.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out._seq = -1
    out.op = op
    out.requires_grad = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._seq = next(_seq)
    return out


class Graph:
    """The executed primitives reachable from one output, in execution order.

    Built by tracing parent links back from ``output``; ``nodes`` is sorted by
    execution sequence number, so iterating it in reverse gives the order in
    which backward visits them.
    """

    def __init__(self, output):
        seen = set()
        nodes = []
        stack = [output]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._backward is None:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda n: n._seq)
        self.output = output
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Populate ``grad`` on every leaf tensor that ``loss`` depends on.

    Gradients accumulate additively into existing ``grad`` arrays.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractViolation("loss does not depend on any tensor requiring grad")
    if loss._backward is None:
        _accumulate(loss, np.ones_like(loss.data))
        return
    graph = Graph(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                _accumulate(parent, pg)
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
    # Release the graph so activations can be freed.
    for node in graph.nodes:
        node._parents = ()
        node._backward = None


def _accumulate(leaf, g):
    g = np.asarray(g, dtype=leaf.data.dtype)
    if g.shape != leaf.data.shape:
        g = np.broadcast_to(g, leaf.data.shape)
    if leaf.grad is None:
        leaf.grad = np.array(g, copy=True)
    else:
        leaf.grad = leaf.grad + g
