"""Streaming transducer decoding with endpointing.

The recogniser consumes model-input frames (stacked, 30 ms). Every frame
updates the endpointer posterior; every second frame completes an encoder
frame, which advances the beam search and, when an EOU joint exists,
yields an end-of-utterance probability. The mic closer watches both.

Frame clocks: ``frame`` counts model-input frames; ``raw_frame`` is the
number of 10 ms feature frames consumed, ``3 * (frame + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ContractViolation, StreamClosedError
from .frontend import featurize, language_index, raw_clock, stacked_frame_ms
from .model import EncoderStream, Joint, Predictor, PredictorCache, Transducer
from .numcore.kernels import log_softmax

FUSION_RULES = ("either", "acoustic_only", "decoder_only")


@dataclass
class DecodeConfig:
    beam_size: int = 4
    max_symbols_per_frame: int = 4
    eou_over_beam: bool = False
    endpointing: bool = True

    def __post_init__(self):
        if self.beam_size < 1 or self.max_symbols_per_frame < 0:
            raise ContractViolation("beam_size must be >= 1 and max_symbols_per_frame >= 0")


@dataclass
class MicCloserConfig:
    acoustic_threshold: float = 0.9
    consecutive_frames: int = 2
    eou_threshold: float = 0.8
    fusion_rule: str = "either"

    def __post_init__(self):
        if not 0.0 < self.acoustic_threshold < 1.0 or not 0.0 < self.eou_threshold < 1.0:
            raise ContractViolation("thresholds must lie in (0, 1)")
        if self.consecutive_frames < 1:
            raise ContractViolation("consecutive_frames must be >= 1")
        if self.fusion_rule not in FUSION_RULES:
            raise ContractViolation(f"fusion_rule must be one of {FUSION_RULES}")


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    score: float


# ---------------------------------------------------------------- search


def _merge(pool, tokens, score):
    old = pool.get(tokens)
    pool[tokens] = score if old is None else float(np.logaddexp(old, score))


def _top(pool, n):
    return sorted(pool.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


class BeamSearch:
    """Frame-synchronous transducer beam search.

    For each encoder frame a hypothesis may emit up to
    ``max_symbols_per_frame`` labels before the blank that ends its frame.
    At every expansion level, finished (blank-terminated) and continuing
    candidates compete for the same ``beam_size`` slots; equal token
    sequences are merged by log-sum-exp. With beam size 1 this is greedy
    decoding.
    """

    def __init__(self, joint, predictor_cache, cfg=None):
        self.joint = joint
        self.cache = predictor_cache
        self.cfg = cfg or DecodeConfig()
        self._pred_proj = {}

    def initial(self):
        return [Hypothesis((), 0.0)]

    def pred_proj(self, tokens):
        out = self._pred_proj.get(tokens)
        if out is None:
            out = self._pred_proj[tokens] = self.joint.project_pred(self.cache.get(tokens))
        return out

    def log_probs(self, enc_proj, tokens):
        return log_softmax(self.joint.logits(enc_proj, self.pred_proj(tokens)))

    def advance(self, beam, enc_frame):
        B, S = self.cfg.beam_size, self.cfg.max_symbols_per_frame
        enc_proj = self.joint.project_enc(enc_frame)
        finals = {}
        active = {h.tokens: h.score for h in beam}
        for level in range(S + 1):
            pool_final = dict(finals)
            pool_cont = {}
            for tokens, score in active.items():
                lp = self.log_probs(enc_proj, tokens)
                _merge(pool_final, tokens, score + float(lp[0]))
                if level < S:
                    for k in range(1, lp.shape[0]):
                        _merge(pool_cont, tokens + (k,), score + float(lp[k]))
            tagged = {(t, True): s for t, s in pool_final.items()}
            tagged.update({(t, False): s for t, s in pool_cont.items()})
            kept = sorted(tagged.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))[:B]
            finals = {t: s for (t, done), s in kept if done}
            active = {t: s for (t, done), s in kept if not done}
            if not active:
                break
        return [Hypothesis(t, s) for t, s in _top(finals, B)]


def greedy_decode(joint, predictor_cache, enc_frames, max_symbols=4):
    """Argmax decoding: emit the best label until blank wins or the per-frame cap is hit."""
    tokens = ()
    for e in enc_frames:
        ep = joint.project_enc(e)
        for _ in range(max_symbols):
            lp = log_softmax(joint.logits(ep, joint.project_pred(predictor_cache.get(tokens))))
            k = int(np.argmax(lp))
            if k == 0:
                break
            tokens = tokens + (k,)
    return tokens


# ---------------------------------------------------------------- endpointing


def softmax(x):
    return np.exp(log_softmax(np.asarray(x, dtype=np.float64)))


def _acoustic_close(history, i, cfg):
    m = cfg.consecutive_frames
    if i + 1 < m:
        return False
    return all(history[j] >= cfg.acoustic_threshold for j in range(i - m + 1, i + 1))


def _fs(post):
    return post if np.ndim(post) == 0 else post[3]


def mic_close_policy(ep_history, eou_history, cfg):
    """First frame at which the microphone closes.

    ``ep_history`` holds per-frame final-silence posteriors (or full 4-class
    posteriors); ``eou_history`` holds per-frame EOU probabilities or None
    where no encoder frame completed. Returns
    ``{"close": bool, "trigger": "acoustic" | "decoder" | None, "frame": int | None}``.
    When both rules fire on the same frame the acoustic trigger is reported.
    """
    fs = [float(_fs(p)) for p in ep_history]
    n = max(len(fs), len(eou_history))
    for i in range(n):
        decision = _decide(fs, eou_history, i, cfg)
        if decision:
            return {"close": True, "trigger": decision, "frame": i}
    return {"close": False, "trigger": None, "frame": None}


def _decide(fs, eou, i, cfg):
    use_a = cfg.fusion_rule in ("either", "acoustic_only")
    use_d = cfg.fusion_rule in ("either", "decoder_only")
    if use_a and i < len(fs) and _acoustic_close(fs, i, cfg):
        return "acoustic"
    if use_d and i < len(eou) and eou[i] is not None and eou[i] >= cfg.eou_threshold:
        return "decoder"
    return None


# ---------------------------------------------------------------- streaming


@dataclass
class PartialEntry:
    frame: int
    ms: int
    tokens: tuple
    ep_posterior: tuple
    p_eou: float | None
    mic_closed: bool


@dataclass
class StepResult:
    partial_best: tuple
    ep_posterior: np.ndarray
    p_eou: float | None
    mic_decision: dict


@dataclass(frozen=True)
class FinalResult:
    tokens: tuple
    close_frame: int | None
    close_step: int | None
    trigger: str | None
    partials: tuple
    frames_consumed: int
    eou_probs: tuple = ()
    ep_posteriors: tuple = ()


class Recognizer:
    """Immutable decoding resources built from a checkpoint; shareable across streams."""

    def __init__(self, ckpt, decode_cfg=None, mic_cfg=None):
        self.ckpt = ckpt
        self.config = ckpt.config
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in ckpt.tensors.items()}
        self.decode_cfg = decode_cfg or DecodeConfig()
        self.mic_cfg = mic_cfg or MicCloserConfig()
        self.joint = Joint(self.arrays, "joint")
        self.eou_joint = Joint(self.arrays, "eou_joint") if "eou_joint.out.w" in self.arrays else None
        self.predictor = Predictor(self.config, self.arrays)
        self.num_languages = int(ckpt.meta.get("num_languages", 0))
        self._model = None

    @property
    def model(self):
        if self._model is None:
            self._model = Transducer(self.config, self.arrays)
        return self._model

    def features(self, record, force=False):
        lid = None
        if self.num_languages:
            lid = language_index(record.language_tag)
            if lid is None:
                if not force:
                    raise ContractViolation(
                        f"record {record.id} mixes languages; this model needs a single language ID"
                    )
                lid = 0
        return featurize(record.frames, self.ckpt.stats, lid=lid, num_languages=self.num_languages)

    def transcript(self, tokens):
        """Token ids without an in-vocabulary EOU."""
        if self.config.eou_in_vocab:
            return tuple(t for t in tokens if t != self.config.eou_id)
        return tuple(tokens)

    def p_eou(self, enc_frame, beam, search):
        if self.eou_joint is None:
            return None
        eou_id = self.config.eou_id
        hyps = beam if self.decode_cfg.eou_over_beam else beam[:1]
        best = 0.0
        ej = self.eou_joint.project_enc(enc_frame)
        for h in hyps:
            pred = search.cache.get(h.tokens)
            p = float(softmax(self.eou_joint.logits(ej, self.eou_joint.project_pred(pred)))[eou_id])
            best = max(best, p)
        return best

    def new_stream(self):
        return StreamState(self)

    def stream(self, frames):
        state = self.new_stream()
        for f in frames:
            if state.mic_closed:
                break
            stream_step(state, f)
        return finalize(state)

    def decode_offline(self, frames):
        """Whole-utterance decoding with the batched encoder; same search and
        endpointing as streaming, truncated where the mic would have closed."""
        frames = np.asarray(frames, dtype=np.float64)
        n = frames.shape[0]
        search = BeamSearch(self.joint, PredictorCache(self.predictor), self.decode_cfg)
        if n == 0:
            return FinalResult((), None, None, None, (), 0)
        with nc.no_grad():
            block0 = self.model.block0_forward(frames)
            ep_logits = self.model.endpointer_forward(block0, frames).data
            enc = self.model.block1_forward(block0).data if n >= 2 else np.zeros((0, self.config.encoder_dim))
        beam = search.initial()
        fs_hist, eou_hist, partials, posts = [], [], [], []
        close = {"close": False, "trigger": None, "frame": None}
        for i in range(n):
            post = softmax(ep_logits[i])
            fs_hist.append(float(post[3]))
            posts.append(post)
            p_eou = None
            if i % 2 == 1:
                beam = search.advance(beam, enc[i // 2])
                p_eou = self.p_eou(enc[i // 2], beam, search)
            eou_hist.append(p_eou)
            trig = _decide(fs_hist, eou_hist, i, self.mic_cfg) if self.decode_cfg.endpointing else None
            partials.append(
                PartialEntry(i, (i + 1) * stacked_frame_ms(), self.transcript(beam[0].tokens), tuple(post), p_eou, bool(trig))
            )
            if trig:
                close = {"close": True, "trigger": trig, "frame": i}
                break
        consumed = len(partials)
        return FinalResult(
            self.transcript(beam[0].tokens),
            raw_clock(close["frame"]) if close["close"] else None,
            close["frame"],
            close["trigger"],
            tuple(partials),
            consumed,
            tuple(eou_hist),
            tuple(tuple(p) for p in posts),
        )

    def decode_record(self, record, streaming=False, force=False):
        feats = self.features(record, force=force)
        return self.stream(feats) if streaming else self.decode_offline(feats)


class StreamState:
    """Per-stream decoder state; owns encoder caches, beam and histories."""

    def __init__(self, recognizer):
        self.rec = recognizer
        self.encoder = EncoderStream(recognizer.config, recognizer.arrays)
        self.search = BeamSearch(recognizer.joint, PredictorCache(recognizer.predictor), recognizer.decode_cfg)
        self.beam = self.search.initial()
        self.frames_consumed = 0
        self.ep_history = []
        self.eou_history = []
        self.fs_history = []
        self.partials = []
        self.mic_closed = False
        self.close_step = None
        self.trigger = None
        self.finalized = False


def stream_step(state, frame):
    """Consume one model-input frame; returns a StepResult."""
    if state.finalized:
        raise StreamClosedError("stream already finalized")
    if state.mic_closed:
        raise StreamClosedError(f"microphone closed at frame {state.close_step}; no further frames accepted")
    rec = state.rec
    out = state.encoder.step(frame)
    i = state.frames_consumed
    post = softmax(out.ep_logits)
    state.ep_history.append(post)
    state.fs_history.append(float(post[3]))
    p_eou = None
    if out.encoder is not None:
        state.beam = state.search.advance(state.beam, out.encoder)
        p_eou = rec.p_eou(out.encoder, state.beam, state.search)
    state.eou_history.append(p_eou)
    trig = _decide(state.fs_history, state.eou_history, i, rec.mic_cfg) if rec.decode_cfg.endpointing else None
    if trig:
        state.mic_closed, state.close_step, state.trigger = True, i, trig
    partial = rec.transcript(state.beam[0].tokens)
    state.partials.append(PartialEntry(i, (i + 1) * stacked_frame_ms(), partial, tuple(post), p_eou, bool(trig)))
    state.frames_consumed += 1
    decision = {"close": bool(trig), "trigger": trig, "frame": i if trig else None}
    return StepResult(partial, post, p_eou, decision)


def finalize(state):
    if state.finalized:
        raise StreamClosedError("stream already finalized")
    state.finalized = True
    return FinalResult(
        state.rec.transcript(state.beam[0].tokens),
        raw_clock(state.close_step) if state.mic_closed else None,
        state.close_step,
        state.trigger,
        tuple(state.partials),
        state.frames_consumed,
        tuple(state.eou_history),
        tuple(tuple(p) for p in state.ep_history),
    )


# ---------------------------------------------------------------- partials log


def format_partials(partials):
    """Tab-separated: frame, ms, tokens (space separated or "-"), 4 posteriors, p_eou or "-", mic flag."""
    lines = []
    for p in partials:
        toks = " ".join(str(t) for t in p.tokens) or "-"
        post = " ".join(repr(float(x)) for x in p.ep_posterior)
        eou = "-" if p.p_eou is None else repr(float(p.p_eou))
        lines.append(f"{p.frame}\t{p.ms}\t{toks}\t{post}\t{eou}\t{int(p.mic_closed)}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_partials(text):
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ContractViolation(f"partials line {n}: expected 6 columns, got {len(cols)}")
        toks = () if cols[2] == "-" else tuple(int(t) for t in cols[2].split())
        post = tuple(float(x) for x in cols[3].split())
        eou = None if cols[4] == "-" else float(cols[4])
        out.append(PartialEntry(int(cols[0]), int(cols[1]), toks, post, eou, cols[5] == "1"))
    return out


def revisions(partials):
    """Frames at which the best partial is not an extension of the previous one."""
    out = []
    prev = ()
    for p in partials:
        if p.tokens[: len(prev)] != prev:
            out.append(p.frame)
        prev = p.tokens
    return out
