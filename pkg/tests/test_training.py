import math

import numpy as np
import pytest

from rntk.errors import ContractViolation, NonFiniteError
from rntk.frontend import AugmentConfig
from rntk.model import ModelConfig, to_bytes
from rntk.training import (
    OptimizerConfig,
    TrainState,
    adam_step,
    ema_update,
    lr_schedule,
    train_endpointer,
    train_stage1,
    train_stage2_eou,
)

TINY = dict(encoder_dim=16, block0_layers=1, block1_layers=1, attention_heads=2, predictor_dim=16, predictor_hidden=16, joint_dim=16)


def tiny_config(**kw):
    return ModelConfig(**{"input_dim": 24, "vocab_size": 12, **TINY, **kw})


def test_lr_schedule_examples():
    cfg = OptimizerConfig(peak_lr=2e-3, warmup_steps=100)
    assert lr_schedule(100, cfg) == 2e-3
    assert lr_schedule(25, cfg) == 2e-3 / 4
    assert lr_schedule(400, cfg) == 2e-3 / 2
    with pytest.raises(ContractViolation):
        lr_schedule(0, cfg)


def test_adam_first_step():
    cfg = OptimizerConfig()
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": np.ones(3)}, TrainState(), 0.1, cfg)
    np.testing.assert_allclose(p["w"], -0.1 / (1.0 + cfg.epsilon), rtol=1e-15)


def test_adam_zero_gradient():
    p = {"w": np.arange(3.0)}
    st = TrainState()
    adam_step(p, {"w": np.zeros(3)}, st, 0.1, OptimizerConfig())
    assert p["w"].tolist() == [0.0, 1.0, 2.0]
    assert st.step == 1


def test_adam_is_deterministic():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=4) for _ in range(5)]
    runs = []
    for _ in range(2):
        p, st = {"w": np.ones(4)}, TrainState()
        for g in grads:
            adam_step(p, {"w": g.copy()}, st, 0.01, OptimizerConfig())
        runs.append((p["w"].tobytes(), st.m["w"].tobytes(), st.v["w"].tobytes()))
    assert runs[0] == runs[1]


def test_adam_names_bad_tensor():
    p = {"enc": np.zeros(2), "dec": np.zeros(2)}
    with pytest.raises(NonFiniteError, match="dec"):
        adam_step(p, {"enc": np.ones(2), "dec": np.array([1.0, math.nan])}, TrainState(), 0.1, OptimizerConfig())
    assert p["enc"].tolist() == [0.0, 0.0]


def test_ema_examples():
    shadow = {"w": np.array([1.0])}
    ema_update(shadow, {"w": np.array([0.0])}, 0.9)
    assert shadow["w"].tolist() == [0.9]
    ema_update(shadow, {"w": np.array([3.0])}, 0.0)
    assert shadow["w"].tolist() == [3.0]
    with pytest.raises(ContractViolation):
        ema_update(shadow, {"w": np.array([3.0])}, 1.0)


def test_ema_closed_form():
    xs = [2.0, -1.0, 4.0, 0.5]
    d = 0.7
    shadow = {"w": np.array([xs[0]])}
    for x in xs[1:]:
        ema_update(shadow, {"w": np.array([x])}, d)
    n = len(xs) - 1
    expected = d**n * xs[0] + sum((1 - d) * d ** (n - i) * xs[i] for i in range(1, n + 1))
    assert shadow["w"][0] == pytest.approx(expected, abs=1e-15)


def test_optimizer_config_contract():
    with pytest.raises(ContractViolation):
        OptimizerConfig(beta1=1.0)
    with pytest.raises(ContractViolation):
        OptimizerConfig(warmup_steps=0)
    assert OptimizerConfig.production().peak_lr == 1.8e-3


def _opt(steps, **kw):
    return OptimizerConfig(max_steps=steps, warmup_steps=20, peak_lr=3e-3, **kw)


def test_stage1_loss_decreases(small_corpus):
    _, log = train_stage1(small_corpus, tiny_config(), _opt(300))
    smooth = log.smoothed()
    assert smooth[-1] < smooth[0]
    assert len(log.entries) == 300


def test_stage1_is_deterministic(small_corpus, tmp_path):
    data = small_corpus[:40]
    a, _ = train_stage1(data, tiny_config(), _opt(5))
    b, _ = train_stage1(data, tiny_config(), _opt(5), log_path=tmp_path / "log.jsonl")
    assert to_bytes(a) == to_bytes(b)
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 5 and '"loss"' in lines[0]


def test_stage1_rejects_mismatched_input(small_corpus):
    with pytest.raises(ContractViolation):
        train_stage1(small_corpus[:4], ModelConfig(input_dim=30, **TINY), _opt(1))


def test_stage1_with_lid_and_joint_endpointer(small_corpus):
    cfg = tiny_config(input_dim=26, lid_dim=2)
    ck, log = train_stage1(small_corpus[:16], cfg, _opt(3), num_languages=2, joint_endpointer=True)
    assert ck.meta["num_languages"] == 2 and ck.meta["joint_endpointer"]
    assert all(np.isfinite(v) for v in log.losses)


def test_stage2_touches_only_the_eou_joint(small_corpus):
    base, _ = train_stage1(small_corpus[:40], tiny_config(), _opt(5))
    ck, log = train_stage2_eou(base, small_corpus[:40], _opt(200, batch_size=8))
    for name, arr in base.tensors.items():
        assert ck.tensors[name].tobytes() == arr.tobytes(), name
    assert ck.has_eou_joint
    smooth = log.smoothed()
    assert smooth[-1] < smooth[0]


def test_stage2_refuses_single_joint_models(small_corpus):
    base, _ = train_stage1(small_corpus[:8], tiny_config(eou_in_vocab=True), _opt(1))
    with pytest.raises(ContractViolation):
        train_stage2_eou(base, small_corpus[:8], _opt(1))


@pytest.mark.parametrize("kind", ["projection_only", "lstm_branch", "standalone_lstm"])
def test_endpointer_training_touches_only_the_branch(small_corpus, kind):
    base, _ = train_stage1(small_corpus[:24], tiny_config(), _opt(2))
    ck, log, acc = train_endpointer(base, small_corpus[:24], _opt(5), kind, small_corpus[24:40])
    for name, arr in base.tensors.items():
        if not name.startswith("ep."):
            assert ck.tensors[name].tobytes() == arr.tobytes(), name
    assert ck.config.ep_branch_kind == kind
    assert 0.0 <= acc <= 1.0


def test_augmentation_can_be_disabled(small_corpus):
    a, _ = train_stage1(small_corpus[:16], tiny_config(), _opt(2), augment=AugmentConfig(enabled=False))
    b, _ = train_stage1(small_corpus[:16], tiny_config(), _opt(2))
    assert to_bytes(a) != to_bytes(b)
