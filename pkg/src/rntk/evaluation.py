"""Evaluation, endpointing sweeps and cost benchmarks over record sets."""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import numcore as nc
from .decode import DecodeConfig, MicCloserConfig, Recognizer, format_partials, mic_close_policy
from .errors import ContractViolation
from .frontend import RAW_FRAME_MS, raw_clock, stack_labels
from .metrics import (
    MetricsReport,
    activation_bytes,
    corpus_wer,
    decoder_macs_per_step,
    ep_latency_report,
    final_silence_accuracy,
    macro_average,
    nearest_rank_percentile,
    rt_factor_report,
    segment_accuracy,
)
from .model import Checkpoint, init_params

DEFAULT_ACOUSTIC = MicCloserConfig()
DEFAULT_EOU_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


def has_trained_endpointer(ckpt):
    return bool(ckpt.meta.get("ep_steps")) or bool(ckpt.meta.get("joint_endpointer"))


def default_fusion(ckpt):
    """Fusion rule the checkpoint can support: None when nothing can close the mic."""
    ep, eou = has_trained_endpointer(ckpt), ckpt.has_eou_joint
    if ep and eou:
        return "either"
    if ep:
        return "acoustic_only"
    if eou:
        return "decoder_only"
    return None


def is_codeswitch(record):
    return is_codeswitch_tag(record.language_tag)


def is_codeswitch_tag(tag):
    return "+" in tag


def evaluate(ckpt, records, decode_cfg=None, mic_cfg=None, force=False, streaming=False):
    """Decode ``records`` and build a MetricsReport.

    Single-language records feed per-language WER; code-switch records are
    reported separately (WER, per-segment accuracy, partials logs). Latency
    fields are filled only when the checkpoint can close the microphone.
    Returns (report, per-record dicts).
    """
    records = list(records)
    rule = default_fusion(ckpt)
    decode_cfg = decode_cfg or DecodeConfig()
    if rule is None:
        decode_cfg = dataclasses.replace(decode_cfg, endpointing=False)
    mic_cfg = mic_cfg or dataclasses.replace(MicCloserConfig(), fusion_rule=rule or "either")
    rec = Recognizer(ckpt, decode_cfg, mic_cfg)
    details, by_lang, cs_pairs, seg_acc, partial_logs = [], {}, [], [], {}
    for r in records:
        if is_codeswitch(r) and rec.num_languages and not force:
            raise ContractViolation(
                f"record {r.id} switches language; a language-ID checkpoint needs --force to decode it"
            )
        res = rec.decode_record(r, streaming=streaming, force=force)
        item = {
            "id": r.id,
            "language": r.language_tag,
            "ref": list(r.tokens),
            "hyp": list(res.tokens),
            "close_frame": res.close_frame,
            "eos_frame": r.eos_frame,
            "trigger": res.trigger,
        }
        if is_codeswitch(r):
            cs_pairs.append((r.tokens, res.tokens))
            if r.segments:
                acc = segment_accuracy(r.tokens, res.tokens, r.segments)
                seg_acc.extend(acc)
                item["segment_accuracy"] = acc
            partial_logs[r.id] = format_partials(res.partials)
        else:
            by_lang.setdefault(r.language_tag, []).append((r.tokens, res.tokens))
        details.append(item)

    report = MetricsReport()
    report.wer_per_language = {k: corpus_wer(v) for k, v in sorted(by_lang.items())}
    report.macro_wer = macro_average(report.wer_per_language.values())
    if decode_cfg.endpointing and rule is not None:
        lat = ep_latency_report([d for d in details if not is_codeswitch_tag(d["language"])] or details)
        report.ep50_ms, report.ep90_ms = lat["ep50_ms"], lat["ep90_ms"]
        report.early_endpoint_rate, report.no_close_rate = lat["early_rate"], lat["no_close_rate"]
    if has_trained_endpointer(ckpt):
        report.final_silence_accuracy = pooled_final_silence_accuracy(rec, records, force)
    cfg = ckpt.config
    report.param_bytes = param_bytes(ckpt)
    report.decoder_macs_per_step = decoder_macs_per_step(cfg)
    report.extra = {
        "fusion_rule": rule if decode_cfg.endpointing else None,
        "decoder_endpointing": ckpt.has_eou_joint,
        "acoustic_endpointing": has_trained_endpointer(ckpt),
        "num_utterances": len(records),
    }
    if cs_pairs:
        report.extra["codeswitch"] = {
            "wer": corpus_wer(cs_pairs),
            "segment_accuracy": float(np.mean(seg_acc)) if seg_acc else None,
            "num_utterances": len(cs_pairs),
        }
        report.extra["partials"] = partial_logs
    return report, details


def pooled_final_silence_accuracy(rec, records, force=False):
    logits, labels = [], []
    for r in records:
        feats = rec.features(r, force=force)
        with nc.no_grad():
            b0 = rec.model.block0_forward(feats)
            logits.append(rec.model.endpointer_forward(b0, feats).data)
        labels.append(stack_labels(r.ep_labels))
    return final_silence_accuracy(np.concatenate(logits), np.concatenate(labels))


def param_bytes(ckpt):
    return int(sum(np.asarray(v).nbytes for v in ckpt.tensors.values()))


def first_emission_frames(ckpt, records, decode_cfg=None):
    """Stacked-frame index at which the best partial first holds a token, per
    record; records that never emit are skipped."""
    rec = Recognizer(ckpt, dataclasses.replace(decode_cfg or DecodeConfig(), endpointing=False))
    out = []
    for r in records:
        res = rec.decode_record(r, force=True)
        hit = next((p.frame for p in res.partials if p.tokens), None)
        if hit is not None:
            out.append(hit)
    return out


# ---------------------------------------------------------------- endpointing sweep


def endpointing_histories(ckpt, records, decode_cfg=None):
    """Per record: final-silence posteriors, EOU probabilities and eos frame,
    from one full decode with the mic never closing."""
    decode_cfg = dataclasses.replace(decode_cfg or DecodeConfig(), endpointing=False)
    rec = Recognizer(ckpt, decode_cfg)
    out = []
    for r in records:
        res = rec.decode_record(r)
        fs = [p[3] for p in res.ep_posteriors]
        out.append({"fs": fs, "eou": list(res.eou_probs), "eos_frame": r.eos_frame})
    return out


def close_frames(histories, mic_cfg):
    """Replay the mic-close policy on recorded histories (decisions only look back)."""
    rows = []
    for h in histories:
        d = mic_close_policy(h["fs"], h["eou"], mic_cfg)
        rows.append({"close_frame": raw_clock(d["frame"]) if d["close"] else None, "eos_frame": h["eos_frame"]})
    return rows


def endpointing_sweep(ckpt, records, acoustic=None, eou_thresholds=DEFAULT_EOU_THRESHOLDS, decode_cfg=None):
    """Latency of acoustic-only closing against decoder and fused closing per EOU threshold.

    Returns a list of rows; the first is the acoustic-only baseline.
    """
    acoustic = acoustic or DEFAULT_ACOUSTIC
    hist = endpointing_histories(ckpt, records, decode_cfg)
    rows = []

    def row(cfg):
        lat = ep_latency_report(close_frames(hist, cfg))
        return {
            "fusion_rule": cfg.fusion_rule,
            "acoustic_threshold": cfg.acoustic_threshold,
            "consecutive_frames": cfg.consecutive_frames,
            "eou_threshold": cfg.eou_threshold if cfg.fusion_rule != "acoustic_only" else None,
            **lat,
        }

    rows.append(row(dataclasses.replace(acoustic, fusion_rule="acoustic_only")))
    if ckpt.has_eou_joint:
        for th in eou_thresholds:
            for rule in ("decoder_only", "either"):
                rows.append(row(dataclasses.replace(acoustic, eou_threshold=th, fusion_rule=rule)))
    return rows


# ---------------------------------------------------------------- cost benchmarks


def audio_seconds(record):
    return record.num_frames * RAW_FRAME_MS / 1000.0


def timed_decodes(recognizers, records, streaming=False, repeats=1):
    """Wall time per record for each named recognizer, interleaved so that
    machine noise hits every variant alike. Returns {name: [seconds]}."""
    times = {name: [] for name in recognizers}
    for r in records:
        for name, rec in recognizers.items():
            best = None
            for _ in range(repeats):
                t = time.perf_counter()
                rec.decode_record(r, streaming=streaming, force=True)
                dt = time.perf_counter() - t
                best = dt if best is None else min(best, dt)
            times[name].append(best)
    return times


def benchmark(ckpt, records, streaming=True, decode_cfg=None):
    """RT50/RT90 of decoding plus analytic decoder cost and memory estimates."""
    records = list(records)
    if not records:
        raise ContractViolation("benchmark needs at least one record")
    decode_cfg = decode_cfg or DecodeConfig(endpointing=False)
    rec = Recognizer(ckpt, decode_cfg)
    secs = timed_decodes({"model": rec}, records, streaming=streaming)["model"]
    rt = rt_factor_report([{"processing_seconds": s, "audio_seconds": audio_seconds(r)} for s, r in zip(secs, records)])
    longest = max(r.num_frames for r in records) // 3
    cfg = ckpt.config
    return {
        "predictor_kind": cfg.predictor_kind,
        "width_multiplier": cfg.width_multiplier,
        "rt50": rt["rt50"],
        "rt90": rt["rt90"],
        "median_seconds_per_utterance": nearest_rank_percentile(secs, 0.5),
        "decoder_macs_per_step": decoder_macs_per_step(cfg),
        "param_bytes": param_bytes(ckpt),
        "activation_bytes": activation_bytes(cfg, longest),
        "streaming": streaming,
        "num_utterances": len(records),
    }


def variant_checkpoint(base, **overrides):
    """Freshly initialised checkpoint sharing ``base``'s features but with other model dims."""
    cfg = dataclasses.replace(base.config, **overrides).effective()
    seed = int(base.meta.get("seed", 0))
    return Checkpoint(init_params(cfg, seed), cfg, base.stats, {"variant": overrides, "seed": seed})


def benchmark_sweep(base, records, predictor_kinds=("lstm", "embedding"), width_multipliers=(1.0,), streaming=True):
    """One benchmark row per (predictor kind, width multiplier) variant.

    Variants are freshly initialised; only cost is measured. The embedding
    predictor is expected to cut per-token decoder work.
    """
    rows = []
    for kind in predictor_kinds:
        for w in width_multipliers:
            ck = variant_checkpoint(base, predictor_kind=kind, width_multiplier=w)
            row = benchmark(ck, records, streaming=streaming)
            row["width_multiplier"] = w
            rows.append(row)
    return rows
