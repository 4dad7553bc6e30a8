"""Training phases: recognition (stage 1), EOU joint (stage 2), endpointer."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .. import numcore as nc
from ..errors import ContractViolation, NonFiniteError
from ..frontend import AugmentConfig, compute_global_stats, featurize, language_index, stack_labels
from ..model import Checkpoint, Transducer, init_eou_from_recognition, init_params
from ..transducer import LossConfig, rnnt_loss_op
from .optim import OptimizerConfig, TrainState, adam_step, ema_decay_at, ema_update, lr_schedule


@dataclass
class TrainLog:
    """Per-step records of (step, lr, loss, wall_ms)."""

    entries: list = field(default_factory=list)
    path: str | None = None

    def append(self, step, lr, loss, wall_ms):
        entry = {"step": step, "lr": lr, "loss": loss, "wall_ms": wall_ms}
        self.entries.append(entry)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(entry) + "\n")

    @property
    def losses(self):
        return [e["loss"] for e in self.entries]

    def smoothed(self, alpha=0.05):
        out, acc = [], None
        for v in self.losses:
            acc = v if acc is None else (1 - alpha) * acc + alpha * v
            out.append(acc)
        return out


def read_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class _Batches:
    """Epoch-wise shuffled index batches from one seeded generator."""

    def __init__(self, n, batch_size, rng):
        if n == 0:
            raise ContractViolation("training set is empty")
        self.n, self.bs, self.rng = n, min(batch_size, n), rng
        self.order, self.pos = rng.permutation(n), 0

    def next(self):
        if self.pos + self.bs > self.n:
            self.order, self.pos = self.rng.permutation(self.n), 0
        idx = self.order[self.pos : self.pos + self.bs]
        self.pos += self.bs
        return [int(i) for i in idx]


def pad_sequences(seqs, value=0.0):
    """Stack (T_i, d) arrays into (B, T_max, d) with right padding."""
    T = max(s.shape[0] for s in seqs)
    out = np.full((len(seqs), T, seqs[0].shape[1]), value, dtype=np.float64)
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = s
    return out


def pad_tokens(token_lists, value=0):
    U = max((len(t) for t in token_lists), default=0)
    out = np.full((len(token_lists), U), value, dtype=np.int64)
    for i, t in enumerate(token_lists):
        out[i, : len(t)] = t
    return out


def _lid_args(record, num_languages):
    if not num_languages:
        return None
    lid = language_index(record.language_tag)
    if lid is None:
        raise ContractViolation(f"record {record.id} has no single language for the LID input")
    return lid


def _grads(model, names):
    out = {}
    for n in names:
        g = model.params[n].grad
        out[n] = g if g is not None else np.zeros_like(model.params[n].data)
    return out


def _checked_loss(loss, step):
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"training diverged at step {step} (loss {value})", "loss")
    return value


def _step(model, names, loss, state, opt, step, log, t0):
    value = _checked_loss(loss, step)
    nc.backward(loss)
    grads = _grads(model, names)
    lr = lr_schedule(step, opt)
    adam_step({n: model.params[n].data for n in names}, grads, state, lr, opt)
    ema_update(state.shadow, {n: model.params[n].data for n in names}, ema_decay_at(step, opt.ema_decay))
    for n in names:
        model.params[n].grad = None
    log.append(step, lr, value, round((time.perf_counter() - t0) * 1000.0, 3))
    return value


def _export(model, state, names):
    tensors = model.state_dict()
    for n in names:
        tensors[n] = state.shadow[n].copy()
    return tensors


def recognition_logits(model, feats, token_lists, which="joint"):
    """Joint lattice for a padded batch; returns (logits, enc_lengths, block0, padded input)."""
    x = pad_sequences(feats)
    block0 = model.block0_forward(x)
    enc = model.block1_forward(block0)
    pred = model.predictor_forward(pad_tokens(token_lists))
    return model.joint_forward(enc, pred, which), [f.shape[0] // 2 for f in feats], block0, x


def train_stage1(
    records,
    model_config,
    opt=None,
    loss_cfg=None,
    augment=None,
    stats=None,
    num_languages=0,
    joint_endpointer=False,
    log_path=None,
    meta=None,
):
    """Train encoder, predictor and recognition joint with the transducer loss.

    ``num_languages`` > 0 enables the LID-input ablation (one-hot appended to
    every stacked frame). With ``model_config.eou_in_vocab`` the targets gain
    a trailing EOU token predicted by the single joint. ``joint_endpointer``
    adds the per-frame endpointer loss and trains the branch alongside.
    Returns (Checkpoint of EMA weights, TrainLog).
    """
    opt = opt or OptimizerConfig()
    loss_cfg = loss_cfg or LossConfig()
    augment = AugmentConfig() if augment is None else augment
    records = list(records)
    stats = stats or compute_global_stats(records)
    cfg = model_config.effective()
    if cfg.input_dim != 3 * stats.dim + num_languages or cfg.lid_dim != num_languages:
        raise ContractViolation(
            f"input_dim {cfg.input_dim} / lid_dim {cfg.lid_dim} do not match features "
            f"(3 x {stats.dim} + {num_languages} LID)"
        )
    if cfg.eou_in_vocab:
        loss_cfg = dataclasses.replace(loss_cfg, include_eou=True)
    model = Transducer(cfg, init_params(cfg, opt.seed))
    names = model.names("encoder") + model.names("predictor") + model.names("joint")
    if joint_endpointer:
        names += model.names("endpointer")
    model.set_trainable(names)
    rng = np.random.default_rng(opt.seed)
    batches = _Batches(len(records), opt.batch_size, rng)
    state = TrainState()
    ema_update(state.shadow, {n: model.params[n].data for n in names}, 0.0)
    log = TrainLog(path=log_path)
    if log_path:
        open(log_path, "w").close()
    t0 = time.perf_counter()
    for step in range(1, opt.max_steps + 1):
        batch = [records[i] for i in batches.next()]
        feats = [featurize(r.frames, stats, augment, rng, _lid_args(r, num_languages), num_languages) for r in batch]
        targets = [list(r.tokens) + ([cfg.eou_id] if cfg.eou_in_vocab else []) for r in batch]
        logits, lengths, block0, x = recognition_logits(model, feats, targets)
        loss, _ = rnnt_loss_op(logits, targets, lengths, loss_cfg)
        if joint_endpointer:
            labels = pad_tokens([stack_labels(r.ep_labels) for r in batch], value=-1)
            ep = model.endpointer_forward(block0, x)
            loss = loss + nc.cross_entropy(ep, labels, ignore_index=-1)
        _step(model, names, loss, state, opt, step, log, t0)
    info = {
        "stage": "1",
        "steps": opt.max_steps,
        "seed": opt.seed,
        "fastemit_lambda": loss_cfg.fastemit_lambda,
        "num_languages": num_languages,
        "joint_endpointer": joint_endpointer,
    }
    info.update(meta or {})
    return Checkpoint(_export(model, state, names), cfg, stats, info), log


def _frozen_features(model, ckpt, records, num_languages, batch=32):
    """Stacked inputs, block-0 and block-1 outputs of a frozen encoder."""
    feats = [featurize(r.frames, ckpt.stats, None, None, _lid_args(r, num_languages), num_languages) for r in records]
    block0, enc = [], []
    for i in range(0, len(feats), batch):
        chunk = feats[i : i + batch]
        b0 = model.block0_forward(pad_sequences(chunk))
        e = model.block1_forward(b0)
        for j, f in enumerate(chunk):
            block0.append(b0.data[j, : f.shape[0]].copy())
            enc.append(e.data[j, : f.shape[0] // 2].copy())
    return feats, block0, enc


def train_stage2_eou(ckpt, records, opt=None, log_path=None):
    """Fine-tune only a fresh EOU joint on EOU-terminated targets.

    Everything else is frozen, so encoder and predictor outputs are computed
    once. The predictor never consumes EOU, so the lattice row after the EOU
    takes the learned ``eou_joint.after`` vector instead of a predictor output.
    """
    opt = opt or OptimizerConfig()
    if ckpt.config.eou_in_vocab:
        raise ContractViolation("stage 2 applies to stage-separated models (eou_in_vocab is off)")
    ckpt = init_eou_from_recognition(ckpt)
    cfg = ckpt.config
    model = Transducer(cfg, ckpt.tensors)
    names = model.names("eou_joint")
    model.set_trainable(names)
    num_languages = int(ckpt.meta.get("num_languages", 0))
    records = list(records)
    _, _, enc = _frozen_features(model, ckpt, records, num_languages)
    preds = []
    for r in records:
        p = model.predictor_forward(pad_tokens([list(r.tokens)])).data[0]
        preds.append(np.concatenate([p, np.zeros_like(p[-1:])], axis=0))
    loss_cfg = LossConfig(fastemit_lambda=0.0, include_eou=True)
    rng = np.random.default_rng(opt.seed)
    batches = _Batches(len(records), opt.batch_size, rng)
    state = TrainState()
    ema_update(state.shadow, {n: model.params[n].data for n in names}, 0.0)
    log = TrainLog(path=log_path)
    if log_path:
        open(log_path, "w").close()
    t0 = time.perf_counter()
    for step in range(1, opt.max_steps + 1):
        idx = batches.next()
        e = nc.Tensor(pad_sequences([enc[i] for i in idx]))
        p = pad_sequences([preds[i] for i in idx])
        after = np.zeros(p.shape[:2] + (1,))
        for row, i in enumerate(idx):
            after[row, len(records[i].tokens) + 1] = 1.0
        p = nc.add(nc.Tensor(p), nc.mul(nc.Tensor(after), model.params["eou_joint.after"]))
        targets = [list(records[i].tokens) + [cfg.eou_id] for i in idx]
        logits = model.joint_forward(e, p, "eou_joint")
        loss, _ = rnnt_loss_op(logits, targets, [enc[i].shape[0] for i in idx], loss_cfg)
        _step(model, names, loss, state, opt, step, log, t0)
    meta = dict(ckpt.meta, stage="eou", eou_steps=opt.max_steps)
    return Checkpoint(_export(model, state, names), cfg, ckpt.stats, meta), log


def train_endpointer(ckpt, records, opt=None, ep_branch_kind=None, dev_records=None, log_path=None):
    """Train only the endpointer branch with per-frame cross entropy.

    Block 0 is frozen (its outputs are computed once). ``ep_branch_kind``
    swaps in a freshly initialised branch of another variant. Returns
    (Checkpoint, TrainLog, dev final-silence accuracy or None).
    """
    opt = opt or OptimizerConfig()
    cfg = ckpt.config
    tensors = dict(ckpt.tensors)
    if ep_branch_kind and ep_branch_kind != cfg.ep_branch_kind:
        cfg = dataclasses.replace(cfg, ep_branch_kind=ep_branch_kind)
        tensors = {k: v for k, v in tensors.items() if not k.startswith("ep.")}
        fresh = init_params(cfg, opt.seed)
        tensors.update({k: v for k, v in fresh.items() if k.startswith("ep.")})
    model = Transducer(cfg, tensors)
    names = model.names("endpointer")
    model.set_trainable(names)
    num_languages = int(ckpt.meta.get("num_languages", 0))
    records = list(records)
    feats, block0, _ = _frozen_features(model, ckpt, records, num_languages)
    labels = [stack_labels(r.ep_labels) for r in records]
    rng = np.random.default_rng(opt.seed)
    batches = _Batches(len(records), opt.batch_size, rng)
    state = TrainState()
    ema_update(state.shadow, {n: model.params[n].data for n in names}, 0.0)
    log = TrainLog(path=log_path)
    if log_path:
        open(log_path, "w").close()
    t0 = time.perf_counter()
    for step in range(1, opt.max_steps + 1):
        idx = batches.next()
        b0 = nc.Tensor(pad_sequences([block0[i] for i in idx]))
        x = nc.Tensor(pad_sequences([feats[i] for i in idx]))
        logits = model.endpointer_forward(b0, x)
        loss = nc.cross_entropy(logits, pad_tokens([labels[i] for i in idx], value=-1), ignore_index=-1)
        _step(model, names, loss, state, opt, step, log, t0)
    out_tensors = _export(model, state, names)
    meta = dict(ckpt.meta, ep_steps=opt.max_steps, ep_branch_kind=cfg.ep_branch_kind)
    result = Checkpoint(out_tensors, cfg, ckpt.stats, meta)
    accuracy = None
    if dev_records:
        accuracy = final_silence_accuracy_of(result, dev_records)
    return result, log, accuracy


def endpointer_logits(ckpt, records):
    """Offline endpointer logits per record (stacked clock)."""
    model = Transducer(ckpt.config, ckpt.tensors)
    num_languages = int(ckpt.meta.get("num_languages", 0))
    feats, block0, _ = _frozen_features(model, ckpt, list(records), num_languages)
    out = []
    for f, b in zip(feats, block0):
        out.append(model.endpointer_forward(nc.Tensor(b), nc.Tensor(f)).data)
    return out


def final_silence_accuracy_of(ckpt, records):
    """Pooled final-silence frame accuracy of the checkpoint's endpointer on ``records``."""
    from ..metrics import final_silence_accuracy

    logits = endpointer_logits(ckpt, records)
    labels = [stack_labels(r.ep_labels) for r in records]
    return final_silence_accuracy(np.concatenate(logits), np.concatenate(labels))


__all__ = [
    "TrainLog",
    "endpointer_logits",
    "final_silence_accuracy_of",
    "pad_sequences",
    "pad_tokens",
    "read_log",
    "recognition_logits",
    "train_endpointer",
    "train_stage1",
    "train_stage2_eou",
]
