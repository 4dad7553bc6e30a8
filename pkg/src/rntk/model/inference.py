"""Single-step predictor and joint evaluation on plain arrays (decoding path)."""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from ..numcore.kernels import lstm_cell
from .params import predictor_vocab


class Predictor:
    """Label-history encoder used during search.

    ``state`` is opaque: LSTM (h, c) per layer, or the token context window
    for the embedding variant. The empty prefix maps to the learned start
    vector.
    """

    def __init__(self, config, arrays):
        self.config = config
        self.P = arrays
        self.num_ids = predictor_vocab(config)

    def initial(self):
        cfg = self.config
        vec = np.array(self.P["pred.start"])
        if cfg.predictor_kind == "embedding":
            return vec, (0,) * cfg.predictor_context_size
        zero = np.zeros(cfg.predictor_hidden)
        return vec, tuple((zero, zero) for _ in range(cfg.predictor_layers))

    def step(self, token, state):
        """Advance by one emitted token; returns (pred_vec, state')."""
        cfg, P = self.config, self.P
        if not 1 <= token < self.num_ids:
            raise ContractViolation(f"token id {token} outside [1, {self.num_ids})")
        if cfg.predictor_kind == "embedding":
            window = (*state[1:], token)
            e = P["pred.embed"][list(window)].reshape(-1)
            return e @ P["pred.proj.w"] + P["pred.proj.b"], window
        x = P["pred.embed"][token]
        if not cfg.predictor_layers:
            return np.array(x), state
        new = []
        for i, (h, c) in enumerate(state):
            h, c = lstm_cell(x, h, c, P[f"pred.lstm{i}.w"], P[f"pred.lstm{i}.b"])
            new.append((h, c))
            x = h
        return x @ P["pred.proj.w"] + P["pred.proj.b"], tuple(new)

    def run(self, tokens):
        vec, state = self.initial()
        for t in tokens:
            vec, state = self.step(t, state)
        return vec, state


class PredictorCache:
    """Memoises predictor outputs by token prefix (shared across beam entries)."""

    def __init__(self, predictor):
        self.predictor = predictor
        self.table = {(): predictor.initial()}
        self.steps = 0

    def get(self, tokens):
        tokens = tuple(tokens)
        hit = self.table.get(tokens)
        if hit is not None:
            return hit[0]
        _, parent = self.table.get(tokens[:-1]) or (None, None)
        if parent is None:
            self.get(tokens[:-1])
            parent = self.table[tokens[:-1]][1]
        out = self.predictor.step(tokens[-1], parent)
        self.steps += 1
        self.table[tokens] = out
        return out[0]


class Joint:
    """tanh(W_e enc + W_p pred + b) followed by the output projection."""

    def __init__(self, arrays, prefix="joint"):
        self.enc_w = arrays[f"{prefix}.enc.w"]
        self.pred_w = arrays[f"{prefix}.pred.w"]
        self.pred_b = arrays[f"{prefix}.pred.b"]
        self.out_w = arrays[f"{prefix}.out.w"]
        self.out_b = arrays[f"{prefix}.out.b"]

    @property
    def width(self):
        return self.out_w.shape[1]

    def project_enc(self, enc):
        return enc @ self.enc_w

    def project_pred(self, pred):
        return pred @ self.pred_w + self.pred_b

    def logits(self, enc_proj, pred_proj):
        return np.tanh(enc_proj + pred_proj) @ self.out_w + self.out_b

    def __call__(self, enc, pred):
        if enc.shape[-1] != self.enc_w.shape[0] or pred.shape[-1] != self.pred_w.shape[0]:
            raise ContractViolation("joint input widths do not match the model")
        return self.logits(self.project_enc(enc), self.project_pred(pred))
