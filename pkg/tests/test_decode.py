import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rntk.decode import (
    BeamSearch,
    DecodeConfig,
    MicCloserConfig,
    Recognizer,
    finalize,
    format_partials,
    greedy_decode,
    mic_close_policy,
    parse_partials,
    revisions,
    stream_step,
)
from rntk.errors import ContractViolation, StreamClosedError
from rntk.frontend import FeatureStats
from rntk.model import Checkpoint, ModelConfig, PredictorCache, init_eou_from_recognition, init_params

CFG = ModelConfig(encoder_dim=16, block0_layers=1, block1_layers=1, attention_heads=2, predictor_dim=16, predictor_hidden=16, joint_dim=16, vocab_size=4)


def checkpoint(seed=0, cfg=CFG, eou=False, **tweaks):
    arrays = init_params(cfg, seed)
    for k, v in tweaks.items():
        arrays[k.replace("__", ".")] = v
    ck = Checkpoint(arrays, cfg, FeatureStats.identity(8))
    if eou:
        ck = init_eou_from_recognition(ck)
        rng = np.random.default_rng(seed)
        ck.tensors["eou_joint.out.w"][:, -1] = rng.normal(0, 1, size=cfg.joint_dim)
    return ck


def feats(T, seed=0):
    return np.random.default_rng(seed).normal(size=(T, CFG.input_dim))


def test_mic_policy_acoustic_trace():
    cfg = MicCloserConfig(acoustic_threshold=0.9, consecutive_frames=2)
    d = mic_close_policy([0.2, 0.95, 0.96, 0.97], [None] * 4, cfg)
    assert d == {"close": True, "trigger": "acoustic", "frame": 2}


def test_mic_policy_decoder_trace():
    cfg = MicCloserConfig(eou_threshold=0.8, fusion_rule="decoder_only")
    d = mic_close_policy([0.99, 0.99], [0.1, 0.85], cfg)
    assert d == {"close": True, "trigger": "decoder", "frame": 1}


def test_mic_policy_never_closes():
    d = mic_close_policy([0.1, 0.5, 0.2], [0.1, None, 0.3], MicCloserConfig())
    assert d == {"close": False, "trigger": None, "frame": None}


def test_mic_policy_tie_reports_acoustic():
    d = mic_close_policy([0.95, 0.95], [0.1, 0.9], MicCloserConfig())
    assert d["trigger"] == "acoustic" and d["frame"] == 1


def test_mic_policy_accepts_full_posteriors():
    post = [[0.7, 0.1, 0.1, 0.1], [0.0, 0.0, 0.05, 0.95], [0.0, 0.0, 0.02, 0.98]]
    assert mic_close_policy(post, [], MicCloserConfig())["frame"] == 2


def test_mic_config_contract():
    with pytest.raises(ContractViolation):
        MicCloserConfig(acoustic_threshold=1.0)
    with pytest.raises(ContractViolation):
        MicCloserConfig(fusion_rule="and")


def test_blank_dominant_model_emits_nothing():
    bias = np.zeros(CFG.vocab_size + 1)
    bias[0] = 100.0
    rec = Recognizer(checkpoint(joint__out__b=bias), DecodeConfig(beam_size=1, endpointing=False))
    res = rec.stream(feats(10))
    assert res.tokens == ()
    assert all(p.tokens == () for p in res.partials)


@pytest.mark.parametrize("seed", range(5))
def test_streaming_equals_offline(seed):
    rec = Recognizer(checkpoint(seed, eou=True), DecodeConfig(endpointing=False))
    x = feats(15, seed)
    a, b = rec.stream(x), rec.decode_offline(x)
    assert a.tokens == b.tokens
    assert a.partials == b.partials
    assert a.eou_probs == b.eou_probs


@settings(max_examples=10)
@given(st.integers(0, 10**6), st.integers(2, 14))
def test_beam_one_is_greedy(seed, T):
    ck = checkpoint(seed % 7)
    rec = Recognizer(ck, DecodeConfig(beam_size=1, endpointing=False))
    x = feats(T, seed)
    enc = rec.model.block1_forward(rec.model.block0_forward(x)).data
    assert rec.decode_offline(x).tokens == greedy_decode(rec.joint, PredictorCache(rec.predictor), enc)


def test_beam_is_bounded_and_unique():
    rec = Recognizer(checkpoint(1), DecodeConfig(beam_size=3))
    search = BeamSearch(rec.joint, PredictorCache(rec.predictor), rec.decode_cfg)
    enc = rec.model.block1_forward(rec.model.block0_forward(feats(12))).data
    beam = search.initial()
    for e in enc:
        beam = search.advance(beam, e)
        assert len(beam) <= 3
        assert len({h.tokens for h in beam}) == len(beam)
        assert all(np.isfinite(h.score) for h in beam)


def test_zero_frame_stream():
    res = finalize(Recognizer(checkpoint()).new_stream())
    assert res.tokens == () and res.close_frame is None and res.partials == ()


def test_closed_stream_rejects_frames():
    mic = MicCloserConfig(acoustic_threshold=0.01, consecutive_frames=1)
    rec = Recognizer(checkpoint(), DecodeConfig(), mic)
    state = rec.new_stream()
    out = stream_step(state, feats(1)[0])
    assert out.mic_decision["close"]
    with pytest.raises(StreamClosedError):
        stream_step(state, feats(1)[0])
    res = finalize(state)
    assert res.close_frame == 3 and res.close_step == 0
    assert len(res.partials) == res.frames_consumed == 1
    with pytest.raises(StreamClosedError):
        finalize(state)


def test_early_cutoff_equals_prefix_decode():
    ck = checkpoint(2, eou=True)
    mic = MicCloserConfig(eou_threshold=0.3, fusion_rule="decoder_only")
    x = feats(20, 4)
    res = Recognizer(ck, DecodeConfig(), mic).stream(x)
    assert res.close_step is not None
    prefix = Recognizer(ck, DecodeConfig(endpointing=False)).stream(x[: res.close_step + 1])
    assert prefix.tokens == res.tokens


def test_eou_joint_never_changes_transcripts():
    ck = checkpoint(3, eou=True)
    x = feats(16, 5)
    cfg = DecodeConfig(endpointing=False)
    with_eou = Recognizer(ck, cfg).stream(x)
    without = Recognizer(ck.without_eou_joint(), cfg).stream(x)
    assert with_eou.tokens == without.tokens
    assert [p.tokens for p in with_eou.partials] == [p.tokens for p in without.partials]
    assert all(p is None for p in without.eou_probs)
    assert any(p is not None for p in with_eou.eou_probs)


def test_eou_over_beam_is_at_least_best_only():
    ck = checkpoint(4, eou=True)
    x = feats(12, 1)
    best = Recognizer(ck, DecodeConfig(endpointing=False)).stream(x)
    over = Recognizer(ck, DecodeConfig(endpointing=False, eou_over_beam=True)).stream(x)
    for a, b in zip(best.eou_probs, over.eou_probs):
        assert (a is None) == (b is None)
        if a is not None:
            assert b >= a


def test_partials_roundtrip_and_clock():
    res = Recognizer(checkpoint(eou=True), DecodeConfig(endpointing=False)).stream(feats(6))
    text = format_partials(res.partials)
    assert list(res.partials) == parse_partials(text)
    assert [p.ms for p in res.partials] == [30, 60, 90, 120, 150, 180]
    assert text.splitlines()[0].split("\t")[4] == "-"


def test_revisions():
    from rntk.decode import PartialEntry

    log = [PartialEntry(i, 0, t, (), None, False) for i, t in enumerate([(), (1,), (1, 2), (3,), (3, 4)])]
    assert revisions(log) == [3]


def test_lid_model_needs_force():
    cfg = dataclasses.replace(CFG, input_dim=26, lid_dim=2)
    ck = checkpoint(cfg=cfg)
    ck.meta["num_languages"] = 2
    from rntk.synthdata import make_codeswitch_set, make_languages

    rec_cs = make_codeswitch_set(make_languages(2, 2, 8, 0), 1, seed=0)[0]
    rec = Recognizer(ck)
    with pytest.raises(ContractViolation):
        rec.decode_record(rec_cs)
    assert rec.decode_record(rec_cs, force=True).frames_consumed > 0
