"""Minimal dense tensor library with reverse-mode gradients (float64 by default)."""

from . import kernels
from .gradcheck import check_gradients, numeric_grad, relative_error
from .ops import (
    add,
    as_tensor,
    causal_attention,
    causal_conv1d,
    concat,
    cross_entropy,
    div,
    embedding,
    exp,
    getitem,
    glu,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    pad_time,
    relu,
    reshape,
    sigmoid,
    sub,
    sum,
    swish,
    tanh,
    transpose,
)
from .tensor import Graph, Tensor, backward, is_grad_enabled, make_op, no_grad

__all__ = [
    "Graph",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "causal_attention",
    "causal_conv1d",
    "check_gradients",
    "concat",
    "cross_entropy",
    "div",
    "embedding",
    "exp",
    "getitem",
    "glu",
    "is_grad_enabled",
    "kernels",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "make_op",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "numeric_grad",
    "pad_time",
    "relative_error",
    "relu",
    "reshape",
    "sigmoid",
    "sub",
    "sum",
    "swish",
    "tanh",
    "transpose",
]
