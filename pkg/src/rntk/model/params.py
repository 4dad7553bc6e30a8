"""Parameter layout, initialisation and closed-form parameter counts."""

from __future__ import annotations

import numpy as np

from .config import EP_CLASSES


def _ln(shapes, prefix, d):
    shapes[f"{prefix}.g"] = (d,)
    shapes[f"{prefix}.b"] = (d,)


def _lin(shapes, prefix, n_in, n_out, bias=True):
    shapes[f"{prefix}.w"] = (n_in, n_out)
    if bias:
        shapes[f"{prefix}.b"] = (n_out,)


def conformer_shapes(shapes, prefix, d, mult, kernel):
    for ff in ("ff1", "ff2"):
        _ln(shapes, f"{prefix}.{ff}.ln", d)
        _lin(shapes, f"{prefix}.{ff}.w1", d, mult * d)
        _lin(shapes, f"{prefix}.{ff}.w2", mult * d, d)
    _ln(shapes, f"{prefix}.conv.ln", d)
    _lin(shapes, f"{prefix}.conv.pw1", d, 2 * d)
    shapes[f"{prefix}.conv.dw"] = (kernel, d)
    _ln(shapes, f"{prefix}.conv.norm", d)
    _lin(shapes, f"{prefix}.conv.pw2", d, d)
    _ln(shapes, f"{prefix}.attn.ln", d)
    _lin(shapes, f"{prefix}.attn.qkv", d, 3 * d)
    _lin(shapes, f"{prefix}.attn.out", d, d)
    _ln(shapes, f"{prefix}.ln", d)


def _lstm(shapes, prefix, n_in, hidden):
    shapes[f"{prefix}.w"] = (n_in + hidden, 4 * hidden)
    shapes[f"{prefix}.b"] = (4 * hidden,)


def block1_plan(cfg):
    """[(input_width, layer_width)] for every block-1 layer, plus the output width."""
    widths = cfg.block1_widths
    current = 2 * cfg.encoder_dim
    plan = []
    for w in widths:
        plan.append((current, w))
        current = w
    return plan, current


def encoder_shapes(cfg, shapes):
    d = cfg.encoder_dim
    _lin(shapes, "encoder.input_proj", cfg.input_dim, d)
    for i in range(cfg.block0_layers):
        conformer_shapes(shapes, f"encoder.block0.{i}", d, cfg.ff_multiplier, cfg.conv_kernel_size)
    plan, out_width = block1_plan(cfg)
    for i, (w_in, w) in enumerate(plan):
        if w_in != w:
            _lin(shapes, f"encoder.block1.proj{i}", w_in, w)
        conformer_shapes(shapes, f"encoder.block1.{i}", w, cfg.ff_multiplier, cfg.conv_kernel_size)
    if out_width != d:
        _lin(shapes, "encoder.block1.out_proj", out_width, d)
    _ln(shapes, "encoder.block1.ln", d)


def endpointer_shapes(cfg, shapes):
    d, e = cfg.encoder_dim, cfg.ep_dim
    kind = cfg.ep_branch_kind
    if kind == "standalone_lstm":
        for i in range(cfg.ep_lstm_layers):
            _lstm(shapes, f"ep.lstm{i}", cfg.input_dim if i == 0 else e, e)
        _lin(shapes, "ep.out", e, EP_CLASSES)
    elif kind == "projection_only":
        _lin(shapes, "ep.out", d, EP_CLASSES)
    elif kind == "lstm_branch":
        _lin(shapes, "ep.proj", d, e)
        for i in range(cfg.ep_lstm_layers):
            _lstm(shapes, f"ep.lstm{i}", e, e)
        _lin(shapes, "ep.out", e, EP_CLASSES)
    else:
        _lin(shapes, "ep.proj", d, e)
        conformer_shapes(shapes, "ep.conformer", e, cfg.ff_multiplier, cfg.conv_kernel_size)
        _lin(shapes, "ep.out", e, EP_CLASSES)
        _ln(shapes, "ep.ln", EP_CLASSES)


def predictor_vocab(cfg):
    """Embedding rows: padding/unused row 0, tokens 1..V, plus EOU when it is a vocabulary item."""
    return cfg.vocab_size + 1 + (1 if cfg.eou_in_vocab else 0)


def predictor_shapes(cfg, shapes):
    p, hdim = cfg.predictor_dim, cfg.predictor_hidden
    shapes["pred.embed"] = (predictor_vocab(cfg), p)
    shapes["pred.start"] = (p,)
    if cfg.predictor_kind == "embedding":
        _lin(shapes, "pred.proj", cfg.predictor_context_size * p, p)
        return
    for i in range(cfg.predictor_layers):
        _lstm(shapes, f"pred.lstm{i}", p if i == 0 else hdim, hdim)
    if cfg.predictor_layers:
        _lin(shapes, "pred.proj", hdim, p)


def joint_shapes(cfg, shapes, prefix="joint", outputs=None):
    outputs = cfg.num_outputs if outputs is None else outputs
    _lin(shapes, f"{prefix}.enc", cfg.encoder_dim, cfg.joint_dim, bias=False)
    _lin(shapes, f"{prefix}.pred", cfg.predictor_dim, cfg.joint_dim)
    _lin(shapes, f"{prefix}.out", cfg.joint_dim, outputs)


def eou_joint_shapes(cfg):
    """EOU joint: a recognition-shaped joint with one extra output, plus the
    predictor-side vector that stands in for the state after EOU."""
    shapes = {}
    joint_shapes(cfg, shapes, "eou_joint", cfg.vocab_size + 2)
    shapes["eou_joint.after"] = (cfg.predictor_dim,)
    return shapes


def parameter_shapes(cfg, parts=("encoder", "endpointer", "predictor", "joint")):
    """Ordered name -> shape map of the model (EOU joint excluded)."""
    cfg = cfg.effective()
    shapes = {}
    builders = {
        "encoder": encoder_shapes,
        "endpointer": endpointer_shapes,
        "predictor": predictor_shapes,
        "joint": joint_shapes,
    }
    for part in parts:
        builders[part](cfg, shapes)
    return shapes


def init_array(name, shape, rng):
    last = name.rsplit(".", 1)[-1]
    if name.endswith(".g"):
        return np.ones(shape)
    if last == "b" and ".lstm" in name:
        hidden = shape[0] // 4
        b = np.zeros(shape)
        b[hidden : 2 * hidden] = 1.0
        return b
    if last == "b":
        return np.zeros(shape)
    if name == "pred.start":
        return rng.normal(0.0, 0.1, shape)
    if name.endswith(".dw"):
        return rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
    if name == "pred.embed":
        return rng.normal(0.0, 1.0, shape)
    fan_in = shape[0]
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return {name: init_array(name, shape, rng) for name, shape in parameter_shapes(cfg).items()}


# ---------------------------------------------------------------- closed-form counts


def conformer_count(d, mult, kernel):
    """Two half-step FF modules, convolution module, self-attention, final LN."""
    ff = 2 * d + (d * mult * d + mult * d) + (mult * d * d + d)
    conv = 2 * d + (2 * d * d + 2 * d) + kernel * d + 2 * d + (d * d + d)
    attn = 2 * d + (3 * d * d + 3 * d) + (d * d + d)
    return 2 * ff + conv + attn + 2 * d


def _lin_count(n_in, n_out, bias=True):
    return n_in * n_out + (n_out if bias else 0)


def _lstm_count(n_in, hidden):
    return 4 * hidden * (n_in + hidden) + 4 * hidden


def encoder_count(cfg):
    cfg = cfg.effective()
    d, m, k = cfg.encoder_dim, cfg.ff_multiplier, cfg.conv_kernel_size
    n = _lin_count(cfg.input_dim, d) + cfg.block0_layers * conformer_count(d, m, k)
    plan, out_width = block1_plan(cfg)
    for w_in, w in plan:
        n += (_lin_count(w_in, w) if w_in != w else 0) + conformer_count(w, m, k)
    if out_width != d:
        n += _lin_count(out_width, d)
    return n + 2 * d


def endpointer_count(cfg):
    cfg = cfg.effective()
    d, e, kind = cfg.encoder_dim, cfg.ep_dim, cfg.ep_branch_kind
    if kind == "standalone_lstm":
        n = sum(_lstm_count(cfg.input_dim if i == 0 else e, e) for i in range(cfg.ep_lstm_layers))
        return n + _lin_count(e, EP_CLASSES)
    if kind == "projection_only":
        return _lin_count(d, EP_CLASSES)
    if kind == "lstm_branch":
        n = _lin_count(d, e) + cfg.ep_lstm_layers * _lstm_count(e, e)
        return n + _lin_count(e, EP_CLASSES)
    n = _lin_count(d, e) + conformer_count(e, cfg.ff_multiplier, cfg.conv_kernel_size)
    return n + _lin_count(e, EP_CLASSES) + 2 * EP_CLASSES


def predictor_count(cfg):
    cfg = cfg.effective()
    p, h = cfg.predictor_dim, cfg.predictor_hidden
    n = predictor_vocab(cfg) * p + p
    if cfg.predictor_kind == "embedding":
        return n + _lin_count(cfg.predictor_context_size * p, p)
    for i in range(cfg.predictor_layers):
        n += _lstm_count(p if i == 0 else h, h)
    if cfg.predictor_layers:
        n += _lin_count(h, p)
    return n


def joint_count(cfg, outputs=None):
    cfg = cfg.effective()
    outputs = cfg.num_outputs if outputs is None else outputs
    return cfg.encoder_dim * cfg.joint_dim + _lin_count(cfg.predictor_dim, cfg.joint_dim) + _lin_count(cfg.joint_dim, outputs)


def count_parameters(cfg):
    """Closed-form parameter counts per component (EOU joint excluded)."""
    counts = {
        "encoder": encoder_count(cfg),
        "endpointer": endpointer_count(cfg),
        "predictor": predictor_count(cfg),
        "joint": joint_count(cfg),
    }
    counts["total"] = sum(counts.values())
    return counts
