"""Deterministic synthetic multilingual corpus.

Each language owns a slice of one shared token inventory. A token is
rendered as a fixed-length template of feature frames drawn around a
per-language cluster centre; silences are near-zero frames. Utterances carry
per-frame endpointer labels:

    0 speech, 1 initial silence, 2 intermediate silence, 3 final silence
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DatasetFormatError

SPEECH, INITIAL_SILENCE, INTERMEDIATE_SILENCE, FINAL_SILENCE = 0, 1, 2, 3
DATASET_FORMAT = "rntk-dataset"
DATASET_VERSION = 1
_LABEL_GRAMMAR = re.compile(r"1*[02]*3+")


@dataclass
class LanguageSpec:
    language_id: int
    token_ids: list
    token_templates: dict
    unigram: np.ndarray
    centre: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self):
        return next(iter(self.token_templates.values())).shape[1]

    @property
    def template_frames(self):
        return next(iter(self.token_templates.values())).shape[0]


@dataclass
class SilenceConfig:
    """Silence lengths in raw 10 ms frames, as inclusive (min, max) ranges."""

    initial: tuple = (3, 9)
    final: tuple = (18, 30)
    pause_prob: float = 0.15
    pause: tuple = (1, 2)
    segment_gap: tuple = (4, 8)
    silence_level: float = 0.05


@dataclass
class UtteranceRecord:
    id: str
    language_tag: str
    tokens: list
    frames: np.ndarray
    ep_labels: np.ndarray
    eos_frame: int
    segments: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, UtteranceRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.language_tag == other.language_tag
            and list(self.tokens) == list(other.tokens)
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
            and np.array_equal(self.ep_labels, other.ep_labels)
            and self.eos_frame == other.eos_frame
            and [list(s) for s in self.segments] == [list(s) for s in other.segments]
        )

    @property
    def num_frames(self):
        return self.frames.shape[0]


def partition_vocab(num_languages, tokens_per_language):
    """Disjoint token id slices; ids start at 1 because 0 is the blank."""
    return [
        list(range(1 + i * tokens_per_language, 1 + (i + 1) * tokens_per_language)) for i in range(num_languages)
    ]


def make_language_spec(language_id, vocab_slice, d, rng, template_frames=4, centre_scale=1.0, spread=1.0):
    """Draw token templates for one language.

    The language centre and templates come from a generator seeded by
    (draw from ``rng``, ``language_id``), so equal seeds with different ids
    still give different languages.
    """
    vocab_slice = list(vocab_slice)
    if not vocab_slice:
        raise ContractViolation("a language needs at least one token")
    sub = np.random.default_rng((int(rng.integers(2**31)), int(language_id)))
    centre = sub.normal(0.0, centre_scale, size=d)
    templates = {}
    for tok in vocab_slice:
        templates[tok] = centre + sub.normal(0.0, spread, size=(template_frames, d))
    unigram = sub.dirichlet(np.full(len(vocab_slice), 4.0))
    return LanguageSpec(language_id, vocab_slice, templates, unigram, centre)


def _silence(n, d, level, rng):
    return rng.normal(0.0, level, size=(n, d)) if level > 0 else np.zeros((n, d))


def _span(r, rng):
    lo, hi = r
    return int(rng.integers(lo, hi + 1))


def _sample_tokens(spec, n, rng):
    return [int(t) for t in rng.choice(spec.token_ids, size=n, p=spec.unigram)]


def _render(pieces, d, noise_std, rng):
    frames = np.concatenate([p[0] for p in pieces], axis=0) if pieces else np.zeros((0, d))
    labels = np.concatenate([np.full(len(p[0]), p[1], dtype=np.int64) for p in pieces])
    if noise_std > 0:
        frames = frames + rng.normal(0.0, noise_std, size=frames.shape)
    return frames, labels


def synth_utterance(spec, num_tokens, silence_cfg, noise_std, rng, utt_id="utt", tokens=None):
    """Render one single-language utterance.

    Layout: initial silence, token templates (optionally separated by short
    pauses), final silence, then i.i.d. Gaussian noise over everything.
    """
    if num_tokens < 1:
        raise ContractViolation("an utterance needs at least one token")
    d = spec.dim
    cfg = silence_cfg
    if tokens is None:
        tokens = _sample_tokens(spec, num_tokens, rng)
    pieces = [(_silence(_span(cfg.initial, rng), d, cfg.silence_level, rng), INITIAL_SILENCE)]
    for i, tok in enumerate(tokens):
        if i > 0 and cfg.pause_prob > 0 and rng.random() < cfg.pause_prob:
            pieces.append((_silence(_span(cfg.pause, rng), d, cfg.silence_level, rng), INTERMEDIATE_SILENCE))
        pieces.append((spec.token_templates[tok], SPEECH))
    pieces.append((_silence(_span(cfg.final, rng), d, cfg.silence_level, rng), FINAL_SILENCE))
    frames, labels = _render(pieces, d, noise_std, rng)
    eos = int(np.argmax(labels == FINAL_SILENCE))
    return UtteranceRecord(utt_id, f"L{spec.language_id}", list(tokens), frames, labels, eos, [[0, len(tokens)]])


def synth_codeswitch_utterance(specs, per_segment_tokens, rng, silence_cfg=None, noise_std=0.0, utt_id="cs"):
    """Concatenate single-language segments separated by intermediate silence."""
    if len(specs) < 2:
        raise ContractViolation("code-switching needs at least two language segments")
    cfg = silence_cfg or SilenceConfig()
    d = specs[0].dim
    counts = per_segment_tokens if isinstance(per_segment_tokens, (list, tuple)) else [per_segment_tokens] * len(specs)
    pieces = [(_silence(_span(cfg.initial, rng), d, cfg.silence_level, rng), INITIAL_SILENCE)]
    tokens, segments = [], []
    for i, (spec, n) in enumerate(zip(specs, counts)):
        if i > 0:
            gap = _silence(_span(cfg.segment_gap, rng), d, cfg.silence_level, rng)
            pieces.append((gap, INTERMEDIATE_SILENCE))
        seg = _sample_tokens(spec, n, rng)
        segments.append([len(tokens), len(tokens) + len(seg)])
        tokens.extend(seg)
        for tok in seg:
            pieces.append((spec.token_templates[tok], SPEECH))
    pieces.append((_silence(_span(cfg.final, rng), d, cfg.silence_level, rng), FINAL_SILENCE))
    frames, labels = _render(pieces, d, noise_std, rng)
    eos = int(np.argmax(labels == FINAL_SILENCE))
    tag = "+".join(f"L{s.language_id}" for s in specs)
    return UtteranceRecord(utt_id, tag, tokens, frames, labels, eos, segments)


def labels_valid(record):
    """Check the label grammar 1*(0|2)*3+ (with some speech) and eos_frame consistency."""
    text = "".join(str(int(x)) for x in record.ep_labels)
    if not _LABEL_GRAMMAR.fullmatch(text) or "0" not in text:
        return False
    # intermediate silence must sit between two speech regions
    if re.search(r"(^|1)2|23", text):
        return False
    return record.eos_frame == text.index("3")


def make_languages(num_languages, tokens_per_language, d, seed, template_frames=4):
    rng = np.random.default_rng(seed)
    return [
        make_language_spec(i, sl, d, rng, template_frames=template_frames)
        for i, sl in enumerate(partition_vocab(num_languages, tokens_per_language))
    ]


def make_dataset(specs, counts, seed, silence_cfg=None, noise_std=0.3, tokens_range=(2, 5), prefix="utt", shuffle=True):
    """Pool per-language utterances with the requested counts.

    Every utterance gets its own generator derived from (seed, language, index)
    so records are reproducible independently of generation order.
    """
    cfg = silence_cfg or SilenceConfig()
    records = []
    for spec, n in zip(specs, counts):
        for i in range(n):
            rng = np.random.default_rng((seed, spec.language_id, i))
            k = int(rng.integers(tokens_range[0], tokens_range[1] + 1))
            records.append(synth_utterance(spec, k, cfg, noise_std, rng, utt_id=f"{prefix}-L{spec.language_id}-{i:05d}"))
    if shuffle:
        order = np.random.default_rng((seed, 10**6)).permutation(len(records))
        records = [records[i] for i in order]
    return records


def make_codeswitch_set(specs, n, seed, silence_cfg=None, noise_std=0.3, segment_tokens=(2, 3), prefix="cs"):
    """Three-segment utterances alternating A, B, A over the first two languages (or all given)."""
    cfg = silence_cfg or SilenceConfig()
    order = [specs[0], specs[1], specs[0]] if len(specs) == 2 else list(specs)
    out = []
    for i in range(n):
        rng = np.random.default_rng((seed, 2**20, i))
        counts = [int(rng.integers(segment_tokens[0], segment_tokens[1] + 1)) for _ in order]
        out.append(synth_codeswitch_utterance(order, counts, rng, cfg, noise_std, utt_id=f"{prefix}-{i:05d}"))
    return out


# ---------------------------------------------------------------- dataset files
#
# Line 1: {"format": "rntk-dataset", "version": 1, "feature_dim": d, "count": N}
# Lines 2..N+1, one JSON object each, keys in this order:
#   id, lang, tokens, frames {"shape": [T, d], "data": [...]}, ep_labels, eos_frame, segments
# Floats are written with repr precision so reading back is bit-exact.


def _record_to_json(r):
    return json.dumps(
        {
            "id": r.id,
            "lang": r.language_tag,
            "tokens": [int(t) for t in r.tokens],
            "frames": {"shape": list(r.frames.shape), "data": r.frames.ravel().tolist()},
            "ep_labels": [int(x) for x in r.ep_labels],
            "eos_frame": int(r.eos_frame),
            "segments": [[int(a), int(b)] for a, b in r.segments],
        },
        allow_nan=False,
    )


def write_dataset(records, path, feature_dim=None):
    records = list(records)
    if feature_dim is None:
        feature_dim = records[0].frames.shape[1] if records else 0
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "feature_dim": int(feature_dim), "count": len(records)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in records:
            fh.write(_record_to_json(r) + "\n")


def _parse_record(obj, lineno, feature_dim):
    try:
        shape = [int(x) for x in obj["frames"]["shape"]]
        data = np.array(obj["frames"]["data"], dtype=np.float64)
        if len(shape) != 2 or data.size != shape[0] * shape[1]:
            raise DatasetFormatError("frame payload does not match its shape", lineno)
        if feature_dim and shape[1] != feature_dim:
            raise DatasetFormatError(f"frame width {shape[1]} != header feature_dim {feature_dim}", lineno)
        labels = np.array(obj["ep_labels"], dtype=np.int64)
        if labels.shape[0] != shape[0]:
            raise DatasetFormatError("ep_labels length differs from frame count", lineno)
        return UtteranceRecord(
            id=str(obj["id"]),
            language_tag=str(obj["lang"]),
            tokens=[int(t) for t in obj["tokens"]],
            frames=data.reshape(shape),
            ep_labels=labels,
            eos_frame=int(obj["eos_frame"]),
            segments=[[int(a), int(b)] for a, b in obj.get("segments", [])],
        )
    except DatasetFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"malformed record ({exc.__class__.__name__}: {exc})", lineno) from None


def read_dataset(path):
    """Read a dataset file, raising DatasetFormatError on any malformed or missing line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        raise DatasetFormatError("file does not end with a newline (truncated?)", len(lines))
    if not lines:
        raise DatasetFormatError("missing header line", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"bad header: {exc.msg}", 1) from None
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError("not an rntk dataset header", 1)
    if header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {header.get('version')}", 1)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"invalid JSON: {exc.msg}", lineno) from None
        records.append(_parse_record(obj, lineno, header.get("feature_dim")))
    if len(records) != header.get("count"):
        raise DatasetFormatError(f"header promises {header.get('count')} records, found {len(records)}")
    return records


def dataset_roundtrip(records, path):
    write_dataset(records, path)
    return read_dataset(path)


def nearest_template_decode(record, spec_list):
    """Recover the token sequence of a noise-free record by template matching."""
    labels = np.asarray(record.ep_labels)
    templates = {tok: tpl for s in spec_list for tok, tpl in s.token_templates.items()}
    F = next(iter(templates.values())).shape[0]
    out = []
    t = 0
    while t < len(labels):
        if labels[t] != SPEECH:
            t += 1
            continue
        chunk = record.frames[t : t + F]
        best = min(templates, key=lambda k: float(np.sum((templates[k] - chunk) ** 2)))
        out.append(best)
        t += F
    return out
