"""The transducer model: two-block causal Conformer encoder, endpointer branch,
label predictor and joint networks."""

from __future__ import annotations

import numpy as np

from .. import numcore as nc
from ..errors import ContractViolation
from . import layers as L
from .config import ModelConfig
from .params import block1_plan, eou_joint_shapes, init_params, parameter_shapes


class Transducer:
    """Parameters plus batched forward passes.

    ``params`` maps names to Tensors. Sequences are (B, T, d) or, for
    convenience, a single (T, d) utterance (the output then drops the batch
    axis too).
    """

    def __init__(self, config, arrays=None, seed=0):
        if not isinstance(config, ModelConfig):
            raise ContractViolation("config must be a ModelConfig")
        self.config = config.effective()
        arrays = init_params(self.config, seed) if arrays is None else arrays
        expected = parameter_shapes(self.config)
        missing = [k for k in expected if k not in arrays]
        if missing:
            raise ContractViolation(f"missing parameters: {missing[:5]}")
        extra_ok = set(eou_joint_shapes(self.config))
        for name, arr in arrays.items():
            shape = expected.get(name) or (eou_joint_shapes(self.config).get(name) if name in extra_ok else None)
            if shape is None:
                raise ContractViolation(f"unexpected parameter {name!r}")
            if tuple(np.shape(arr)) != tuple(shape):
                raise ContractViolation(f"parameter {name!r} has shape {np.shape(arr)}, expected {shape}")
        self.params = {k: nc.Tensor(np.array(v, dtype=np.float64)) for k, v in arrays.items()}

    # ------------------------------------------------------------ bookkeeping

    @property
    def has_eou_joint(self):
        return "eou_joint.out.w" in self.params

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, arrays):
        for k, v in arrays.items():
            if k not in self.params:
                raise ContractViolation(f"unexpected parameter {k!r}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def names(self, part):
        prefixes = {
            "encoder": ("encoder.",),
            "endpointer": ("ep.",),
            "predictor": ("pred.",),
            "joint": ("joint.",),
            "eou_joint": ("eou_joint.",),
        }[part]
        return [k for k in self.params if k.startswith(prefixes)]

    def set_trainable(self, names):
        """Only ``names`` receive gradients; everything else is frozen."""
        names = set(names)
        for k, t in self.params.items():
            t.requires_grad = k in names
            t.grad = None

    def init_eou_joint(self):
        """Create the EOU joint as a copy of the recognition joint.

        The extra output row (EOU) starts at zero weight and zero bias, so it
        initially scores 0 before normalisation. ``eou_joint.after`` (zero at
        init) replaces the predictor output on the lattice row after EOU,
        which the frozen predictor cannot produce.
        """
        cfg = self.config
        V = cfg.vocab_size
        for name in ("joint.enc.w", "joint.pred.w", "joint.pred.b", "joint.out.w", "joint.out.b"):
            if name not in self.params:
                raise ContractViolation(f"missing source tensor {name!r}")
        w = np.zeros((cfg.joint_dim, V + 2))
        b = np.zeros(V + 2)
        src_w = self.params["joint.out.w"].data
        src_b = self.params["joint.out.b"].data
        w[:, : V + 1] = src_w[:, : V + 1]
        b[: V + 1] = src_b[: V + 1]
        self.params["eou_joint.enc.w"] = nc.Tensor(self.params["joint.enc.w"].data.copy())
        self.params["eou_joint.pred.w"] = nc.Tensor(self.params["joint.pred.w"].data.copy())
        self.params["eou_joint.pred.b"] = nc.Tensor(self.params["joint.pred.b"].data.copy())
        self.params["eou_joint.out.w"] = nc.Tensor(w)
        self.params["eou_joint.out.b"] = nc.Tensor(b)
        self.params["eou_joint.after"] = nc.Tensor(np.zeros(cfg.predictor_dim))

    # ------------------------------------------------------------ forward passes

    def _batched(self, x):
        x = nc.as_tensor(x)
        if x.ndim == 2:
            return x.reshape(1, *x.shape), True
        if x.ndim != 3:
            raise ContractViolation(f"expected (T, d) or (B, T, d) input, got {x.shape}")
        return x, False

    def block0_forward(self, frames):
        """Input projection and block-0 layers at the full (30 ms) frame rate."""
        cfg, P = self.config, self.params
        x, single = self._batched(frames)
        if x.shape[-1] != cfg.input_dim:
            raise ContractViolation(f"input width {x.shape[-1]} != model input_dim {cfg.input_dim}")
        h = L.lin(P, "encoder.input_proj", x)
        for i in range(cfg.block0_layers):
            h = L.conformer(P, f"encoder.block0.{i}", h, cfg.attention_heads, cfg.attention_left_context)
        return h.reshape(*h.shape[1:]) if single else h

    def block1_forward(self, block0_out):
        """Pair frames (2i, 2i+1), drop an odd tail, run block 1 at half rate."""
        cfg, P = self.config, self.params
        x, single = self._batched(block0_out)
        B, T, D = x.shape
        T2 = T // 2
        if T2 == 0:
            raise ContractViolation("the stacking layer needs at least 2 frames")
        h = x[:, : 2 * T2, :].reshape(B, T2, 2 * D)
        plan, out_width = block1_plan(cfg)
        for i, (w_in, w) in enumerate(plan):
            if w_in != w:
                h = L.lin(P, f"encoder.block1.proj{i}", h)
            h = L.conformer(P, f"encoder.block1.{i}", h, cfg.attention_heads, cfg.attention_left_context)
        if out_width != cfg.encoder_dim:
            h = L.lin(P, "encoder.block1.out_proj", h)
        h = L.ln(P, "encoder.block1.ln", h)
        return h.reshape(T2, D) if single else h

    def encoder_forward(self, frames):
        """Returns (block0_out (B, T, D), encoder_out (B, T // 2, D))."""
        block0 = self.block0_forward(frames)
        return block0, self.block1_forward(block0)

    def endpointer_forward(self, block0_out, frames=None):
        """Per-frame 4-class endpointer logits at the block-0 rate.

        The standalone LSTM variant reads the model input ``frames`` instead
        of the shared block-0 activations.
        """
        cfg, P = self.config, self.params
        kind = cfg.ep_branch_kind
        if kind == "standalone_lstm":
            if frames is None:
                raise ContractViolation("the standalone endpointer needs the input frames")
            x, single = self._batched(frames)
            h = L.lstm_stack(P, [f"ep.lstm{i}" for i in range(cfg.ep_lstm_layers)], x, cfg.ep_dim)
            out = L.lin(P, "ep.out", h)
        else:
            x, single = self._batched(block0_out)
            if kind == "projection_only":
                out = L.lin(P, "ep.out", x)
            elif kind == "lstm_branch":
                h = L.lin(P, "ep.proj", x)
                h = L.lstm_stack(P, [f"ep.lstm{i}" for i in range(cfg.ep_lstm_layers)], h, cfg.ep_dim)
                out = L.lin(P, "ep.out", h)
            else:
                h = L.lin(P, "ep.proj", x)
                h = L.conformer(P, "ep.conformer", h, cfg.ep_heads, cfg.attention_left_context)
                out = L.ln(P, "ep.ln", L.lin(P, "ep.out", h))
        return out.reshape(*out.shape[1:]) if single else out

    def predictor_forward(self, tokens):
        """Predictor outputs for every prefix of every target.

        ``tokens`` is a (B, U) int array padded with 0. Returns (B, U + 1, P)
        where position u encodes the prefix tokens[:, :u] (u = 0 is the
        empty prefix).
        """
        cfg, P = self.config, self.params
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        B, U = tokens.shape
        p = cfg.predictor_dim
        start = P["pred.start"].reshape(1, 1, p) + nc.Tensor(np.zeros((B, 1, p)))
        if U == 0:
            return start
        if cfg.predictor_kind == "embedding":
            n = cfg.predictor_context_size
            ctx = np.zeros((B, U, n), dtype=np.int64)
            for u in range(U):
                for j in range(n):
                    src = u - n + 1 + j
                    if src >= 0:
                        ctx[:, u, j] = tokens[:, src]
            e = nc.embedding(P["pred.embed"], ctx).reshape(B, U, n * p)
            out = L.lin(P, "pred.proj", e)
        else:
            e = nc.embedding(P["pred.embed"], tokens)
            if cfg.predictor_layers:
                layers = [f"pred.lstm{i}" for i in range(cfg.predictor_layers)]
                h = L.lstm_stack(P, layers, e, cfg.predictor_hidden)
                out = L.lin(P, "pred.proj", h)
            else:
                out = e
        return nc.concat([start, out], axis=1)

    def joint_forward(self, enc, pred, which="joint"):
        """Logits over (B, T', U + 1, K) from enc (B, T', D) and pred (B, U + 1, P)."""
        P = self.params
        if which == "eou_joint" and not self.has_eou_joint:
            raise ContractViolation("model has no EOU joint; call init_eou_joint first")
        e = nc.matmul(enc, P[f"{which}.enc.w"])
        q = L.lin(P, f"{which}.pred", pred)
        B, T2, J = e.shape
        U1 = q.shape[1]
        h = nc.tanh(e.reshape(B, T2, 1, J) + q.reshape(B, 1, U1, J))
        return L.lin(P, f"{which}.out", h)

    def eou_joint_forward(self, enc, pred):
        return self.joint_forward(enc, pred, "eou_joint")
