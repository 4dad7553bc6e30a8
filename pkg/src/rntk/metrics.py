"""Quality, latency and cost measurements."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ContractViolation
from .frontend import RAW_FRAME_MS

FINAL_SILENCE = 3


def edit_distance(ref, hyp):
    """Unit-cost Levenshtein distance (substitutions, insertions, deletions)."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref_tokens, hyp_tokens):
    """Edit distance over reference length. An empty reference scores the
    number of inserted tokens (0 for an empty hypothesis)."""
    n = len(ref_tokens)
    d = edit_distance(ref_tokens, hyp_tokens)
    return float(d) if n == 0 else d / n


def corpus_wer(pairs):
    """Total edits over total reference tokens for (ref, hyp) pairs."""
    edits = sum(edit_distance(r, h) for r, h in pairs)
    words = sum(len(r) for r, _ in pairs)
    if words == 0:
        return float(edits)
    return edits / words


def aligned_hits(ref, hyp):
    """Per reference position, whether a minimum-edit alignment matches it exactly.

    Ties in the backtrace prefer a match, then substitution, deletion, insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j] + 1, D[i, j - 1] + 1, D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]))
    hits = [False] * n
    i, j = n, m
    while i > 0:
        if j > 0 and D[i, j] == D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            hits[i - 1] = ref[i - 1] == hyp[j - 1]
            i, j = i - 1, j - 1
        elif D[i, j] == D[i - 1, j] + 1:
            i -= 1
        else:
            j -= 1
    return hits


def segment_accuracy(ref, hyp, segments):
    """Fraction of each segment's reference tokens recovered under the alignment."""
    hits = aligned_hits(ref, hyp)
    out = []
    for a, b in segments:
        if b <= a:
            raise ContractViolation("empty segment")
        out.append(sum(hits[a:b]) / (b - a))
    return out


def nearest_rank_percentile(values, p):
    """Element at 1-based rank ceil(p * N) of the ascending list (rank >= 1)."""
    values = sorted(values)
    if not values:
        raise ContractViolation("percentile of an empty list")
    if not 0.0 <= p <= 1.0:
        raise ContractViolation("p must lie in [0, 1]")
    rank = math.ceil(Fraction(p).limit_denominator(10**9) * len(values))
    return values[max(rank, 1) - 1]


def latency_ms(close_frame, eos_frame):
    return (close_frame - eos_frame) * RAW_FRAME_MS


def ep_latency_report(results):
    """EP50/EP90 over utterances that closed at or after the end of speech.

    ``results`` holds mappings (or objects) with ``close_frame`` (raw 10 ms
    clock, None when the microphone never closed) and ``eos_frame``. Early
    closes count towards ``early_rate`` and are excluded from the
    percentiles; streams that never closed count towards ``no_close_rate``.
    """
    on_time, early, never = [], 0, 0
    for r in results:
        close = r["close_frame"] if isinstance(r, dict) else r.close_frame
        eos = r["eos_frame"] if isinstance(r, dict) else r.eos_frame
        if close is None:
            never += 1
        elif close < eos:
            early += 1
        else:
            on_time.append(latency_ms(close, eos))
    n = len(on_time) + early + never
    return {
        "ep50_ms": nearest_rank_percentile(on_time, 0.5) if on_time else None,
        "ep90_ms": nearest_rank_percentile(on_time, 0.9) if on_time else None,
        "early_rate": early / n if n else 0.0,
        "no_close_rate": never / n if n else 0.0,
        "num_on_time": len(on_time),
        "num_early": early,
        "num_no_close": never,
        "num_utterances": n,
    }


def final_silence_accuracy(ep_logits, labels):
    """Fraction of true final-silence frames whose argmax class is final silence (None if there are none)."""
    ep_logits = np.asarray(ep_logits)
    labels = np.asarray(labels)
    if ep_logits.shape[:-1] != labels.shape:
        raise ContractViolation("logits and labels must be aligned")
    mask = labels == FINAL_SILENCE
    if not mask.any():
        return None
    pred = ep_logits.argmax(axis=-1)
    return float((pred[mask] == FINAL_SILENCE).mean())


def rt_factor_report(items):
    """RT50/RT90 of processing time over audio duration per utterance."""
    ratios = []
    for it in items:
        proc = it["processing_seconds"] if isinstance(it, dict) else it[0]
        audio = it["audio_seconds"] if isinstance(it, dict) else it[1]
        if audio <= 0:
            raise ContractViolation("zero-length audio has no real-time factor")
        ratios.append(proc / audio)
    return {"rt50": nearest_rank_percentile(ratios, 0.5), "rt90": nearest_rank_percentile(ratios, 0.9)}


def decoder_macs_per_step(cfg):
    """Multiply-accumulates to score one emitted token with predictor and joint.

    LSTM: 4 (d_in + H) H per layer plus the H x d_pred projection.
    Embedding: the (N d_pred) x d_pred projection (table lookups are free).
    Joint: d_pred x J for the predictor projection plus J x K for the output.
    """
    cfg = cfg.effective()
    p, h, j = cfg.predictor_dim, cfg.predictor_hidden, cfg.joint_dim
    if cfg.predictor_kind == "embedding":
        pred = cfg.predictor_context_size * p * p
    else:
        pred = 0
        d_in = p
        for _ in range(cfg.predictor_layers):
            pred += 4 * (d_in + h) * h
            d_in = h
        if cfg.predictor_layers:
            pred += h * p
    return pred + p * j + j * cfg.num_outputs


def activation_bytes(cfg, frames, bytes_per_value=8):
    """Peak live activations of streaming inference: per-layer conv buffers and
    key/value caches over ``frames`` stacked frames, plus one layer's working set."""
    cfg = cfg.effective()
    d = cfg.encoder_dim
    widths = [d] * cfg.block0_layers + list(cfg.block1_widths)
    values = 0
    for i, w in enumerate(widths):
        n = frames if i < cfg.block0_layers else frames // 2
        span = n if cfg.attention_left_context is None else min(n, cfg.attention_left_context + 1)
        values += cfg.conv_kernel_size * w + 2 * span * w
    values += cfg.ff_multiplier * max(widths) + 3 * max(widths)
    return values * bytes_per_value


@dataclass
class MetricsReport:
    wer_per_language: dict = field(default_factory=dict)
    macro_wer: float | None = None
    ep50_ms: float | None = None
    ep90_ms: float | None = None
    early_endpoint_rate: float | None = None
    no_close_rate: float | None = None
    final_silence_accuracy: float | None = None
    rt50: float | None = None
    rt90: float | None = None
    param_bytes: int | None = None
    activation_bytes: int | None = None
    decoder_macs_per_step: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def to_csv(self):
        """Flat metric,value table (nested fields are dotted)."""
        rows = []

        def walk(prefix, value):
            if isinstance(value, dict):
                for k in sorted(value):
                    walk(f"{prefix}.{k}" if prefix else str(k), value[k])
            else:
                rows.append((prefix, "" if value is None else value))

        walk("", self.to_dict())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(rows)
        return buf.getvalue()


def macro_average(values):
    vals = [v for v in values if v is not None]
    return sum(vals) / len(vals) if vals else None
