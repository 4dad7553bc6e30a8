"""Transducer loss over the (T', U + 1) alignment lattice.

Node (t, u) means u labels emitted after consuming encoder frames [0, t).
From a node a blank moves to (t + 1, u) and label y[u] moves to (t, u + 1);
every path ends with a blank out of (T' - 1, U). Index 0 of the last logit
axis is blank.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ContractViolation
from .numcore.kernels import log_softmax

NEG_INF = -np.inf
DEFAULT_FASTEMIT_LAMBDA = 5e-3


@dataclass
class LossConfig:
    fastemit_lambda: float = DEFAULT_FASTEMIT_LAMBDA
    include_eou: bool = False

    def __post_init__(self):
        if not self.fastemit_lambda >= 0:
            raise ContractViolation(f"fastemit_lambda must be >= 0, got {self.fastemit_lambda}")


@dataclass
class LatticeWork:
    log_probs: np.ndarray
    blank: np.ndarray
    label: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    forward_loglik: float
    backward_loglik: float


def _check(logits, targets, include_eou):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 3:
        raise ContractViolation(f"lattice must be (T', U+1, K), got shape {logits.shape}")
    T, U1, K = logits.shape
    U = targets.size
    if U1 != U + 1:
        raise ContractViolation(f"lattice has {U1} label positions for {U} targets")
    if T == 0:
        raise ContractViolation("empty encoder sequence (T' = 0)")
    if K < 2:
        raise ContractViolation("lattice needs blank plus at least one label")
    if U and (targets.min() < 1 or targets.max() >= K):
        raise ContractViolation(f"target ids must lie in [1, {K})")
    return logits, targets


def forward_backward(logits, targets):
    """Log-space alpha/beta tables of the lattice."""
    lp = log_softmax(np.asarray(logits, dtype=np.float64))
    T, U1, _ = lp.shape
    U = U1 - 1
    blank = lp[:, :, 0]
    label = np.full((T, U1), NEG_INF)
    if U:
        label[:, :U] = np.take_along_axis(lp[:, :U, :], np.asarray(targets)[None, :, None], axis=2)[:, :, 0]

    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + blank[t - 1, u] if t > 0 else NEG_INF
            b = alpha[t, u - 1] + label[t, u - 1] if u > 0 else NEG_INF
            alpha[t, u] = np.logaddexp(a, b)

    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = blank[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            a = beta[t + 1, u] + blank[t, u] if t < T - 1 else NEG_INF
            b = beta[t, u + 1] + label[t, u] if u < U else NEG_INF
            beta[t, u] = np.logaddexp(a, b)

    fwd = float(alpha[T - 1, U] + blank[T - 1, U])
    bwd = float(beta[0, 0])
    return LatticeWork(lp, blank, label, alpha, beta, fwd, bwd)


def rnnt_loss(logits, targets, cfg=None):
    """Negative log-likelihood of ``targets`` and its gradient w.r.t. ``logits``.

    With FastEmit (lambda > 0) every label column of the gradient is scaled
    by (1 + lambda); the blank column and the returned loss are unchanged.
    In EOU mode the last logit index is the EOU token and the loss is
    infinite (with a zero gradient) unless the target ends with it.
    """
    cfg = cfg or LossConfig()
    logits, targets = _check(logits, targets, cfg.include_eou)
    T, U1, K = logits.shape
    if cfg.include_eou and (targets.size == 0 or targets[-1] != K - 1):
        return math.inf, np.zeros_like(logits)
    work = forward_backward(logits, targets)
    ll = work.forward_loglik
    if not np.isfinite(ll):
        raise ContractViolation("lattice has zero total probability")
    U = U1 - 1

    beta_next_t = np.full((T, U1), NEG_INF)
    beta_next_t[:-1] = work.beta[1:]
    beta_next_t[T - 1, U] = 0.0
    flow_blank = np.exp(work.alpha + work.blank + beta_next_t - ll)
    flow_label = np.zeros((T, U1))
    if U:
        flow_label[:, :U] = np.exp(work.alpha[:, :U] + work.label[:, :U] + work.beta[:, 1:] - ll)
    occupancy = flow_blank + flow_label

    grad = np.exp(work.log_probs) * occupancy[:, :, None]
    grad[:, :, 0] -= flow_blank
    if U:
        t_idx = np.arange(T)[:, None]
        u_idx = np.arange(U)[None, :]
        grad[t_idx, u_idx, targets[None, :]] -= flow_label[:, :U]
    if cfg.fastemit_lambda:
        grad[:, :, 1:] *= 1.0 + cfg.fastemit_lambda
    return -ll, grad


def count_paths(T, U):
    """Number of alignments in a (T, U) lattice: choose the label slots among
    the T + U - 1 symbols that precede the mandatory final blank."""
    return math.comb(T + U - 1, U)


def enumerate_paths(T, U):
    """Yield every alignment as a tuple of symbols ('b' or 'y')."""
    n = T + U - 1
    for slots in itertools.combinations(range(n), U):
        path = ["b"] * n
        for s in slots:
            path[s] = "y"
        yield tuple(path) + ("b",)


def brute_force_rnnt_loss(logits, targets, max_paths=200_000, dps=50):
    """Sum every alignment's probability in extended precision, return -log.

    Softmax is recomputed independently with mpmath.
    """
    import mpmath

    logits = np.asarray(logits, dtype=np.float64)
    targets = [int(t) for t in np.asarray(targets).reshape(-1)]
    T, U1, K = logits.shape
    U = len(targets)
    if U1 != U + 1 or T == 0:
        raise ContractViolation("lattice shape inconsistent with targets")
    if count_paths(T, U) > max_paths:
        raise ContractViolation(f"instance too large for enumeration ({count_paths(T, U)} paths)")
    with mpmath.workdps(dps):
        probs = {}
        for t in range(T):
            for u in range(U1):
                ex = [mpmath.exp(mpmath.mpf(float(z))) for z in logits[t, u]]
                z = mpmath.fsum(ex)
                probs[t, u] = [e / z for e in ex]
        total = mpmath.mpf(0)
        for path in enumerate_paths(T, U):
            t = u = 0
            p = mpmath.mpf(1)
            for sym in path:
                if sym == "b":
                    p *= probs[t, u][0]
                    t += 1
                else:
                    p *= probs[t, u][targets[u]]
                    u += 1
            total += p
        return float(-mpmath.log(total))


def endpointer_ce_loss(ep_logits, ep_labels):
    """Mean per-frame cross entropy over the 4 endpointer classes; returns (loss, grad)."""
    logits = np.asarray(ep_logits, dtype=np.float64)
    labels = np.asarray(ep_labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != 4 or labels.shape != logits.shape[:1]:
        raise ContractViolation(f"expected (T, 4) logits and T labels, got {logits.shape} and {labels.shape}")
    if labels.size == 0:
        raise ContractViolation("no frames")
    if labels.min() < 0 or labels.max() > 3:
        raise ContractViolation("endpointer labels must lie in {0, 1, 2, 3}")
    lp = log_softmax(logits)
    n = labels.size
    loss = -lp[np.arange(n), labels].sum() / n
    grad = np.exp(lp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# ---------------------------------------------------------------- autodiff integration


def rnnt_loss_op(logits, targets, enc_lengths, cfg=None):
    """Batch-mean transducer loss as a numcore op.

    ``logits`` is a (B, T'max, Umax + 1, K) Tensor; utterance b uses the
    top-left (enc_lengths[b], len(targets[b]) + 1) corner. Returns the loss
    Tensor and the list of per-utterance losses. The mean is accumulated in
    batch order.
    """
    cfg = cfg or LossConfig()
    data = logits.data
    B = data.shape[0]
    if len(targets) != B or len(enc_lengths) != B:
        raise ContractViolation("targets and lengths must match the batch")
    grad = np.zeros_like(data)
    losses = []
    for b in range(B):
        T, U = int(enc_lengths[b]), len(targets[b])
        loss, g = rnnt_loss(data[b, :T, : U + 1], targets[b], cfg)
        losses.append(loss)
        grad[b, :T, : U + 1] = g
    total = 0.0
    for v in losses:
        total += v
    mean = total / B
    grad /= B
    return nc.make_op(np.asarray(mean), (logits,), lambda g: (grad * g,), "rnnt_loss"), losses
