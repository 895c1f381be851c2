"""Optimizer, schedule, evaluation, and training-loop tests.

The AdamW first-step values are checked against the closed form
delta = -lr_eff * mhat / (sqrt(vhat) + eps), which for a fresh state and
unit gradient reduces to -lr_eff / (1 + eps).
"""

import json
import math

import numpy as np
import pytest

from bytelm.data import build_corpus
from bytelm.errors import ConfigError, NumericError
from bytelm.models import ModelConfig, build_model
from bytelm.tensor import Tensor
from bytelm.train import (
    AdamW,
    TrainConfig,
    clip_gradients,
    eval_bpb,
    lr_at_step,
    resolve_steps,
    steps_from_budget,
    train_loop,
)
import bytelm.train as train_mod


# -- schedule --------------------------------------------------------------------


def test_lr_schedule_endpoints_and_warmup_boundary():
    assert lr_at_step(1.0, 0, 1000) == 0.0
    assert lr_at_step(1.0, 1000, 1000) == pytest.approx(0.0, abs=1e-12)
    # warmup ends at 1% of training: full ramp times the cosine there
    assert lr_at_step(1.0, 10, 1000) == pytest.approx(math.cos(0.005 * math.pi), rel=1e-12)
    assert lr_at_step(2.0, 5, 1000) == pytest.approx(2.0 * 0.5 * math.cos(0.0025 * math.pi))
    # no warmup: starts at full rate
    assert lr_at_step(1.0, 0, 100, warmup_frac=0.0) == 1.0


def test_lr_schedule_rises_then_decays():
    vals = [lr_at_step(1.0, s, 200) for s in range(201)]
    peak = max(range(201), key=lambda s: vals[s])
    assert 0 < peak <= 3
    assert all(a >= b for a, b in zip(vals[peak:], vals[peak + 1 :]))


def test_lr_schedule_validation():
    with pytest.raises(ConfigError):
        lr_at_step(1.0, 0, 0)
    with pytest.raises(ConfigError):
        lr_at_step(1.0, -1, 10)
    with pytest.raises(ConfigError):
        lr_at_step(1.0, 11, 10)


def test_default_lr_scales_with_batch():
    assert TrainConfig().base_lr == pytest.approx(0.005 / 8.0)
    assert TrainConfig(batch_size=16, steps=1).base_lr == pytest.approx(0.005 / 4.0)
    assert TrainConfig(lr=0.01, steps=1).base_lr == 0.01


def test_train_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(steps=10, flop_budget=1e9)
    with pytest.raises(ConfigError):
        TrainConfig(warmup_frac=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(beta2=1.0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"steps": 5, "momentum": 0.9})
    cfg = TrainConfig(batch_size=4, steps=7, seed=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_steps_from_budget_floor():
    cfg = ModelConfig(kind="transformer", dim=128, layers=1, context=64)
    # forward: 2 * (12*128^2 + 128*256) + 4*64*128 = 983,040 ... times 3 for training
    per_step = 3.0 * 491_520 * 2 * 64
    assert steps_from_budget(5 * per_step + 1, cfg, batch_size=2) == 5
    assert steps_from_budget(per_step, cfg, batch_size=2) == 1
    with pytest.raises(ConfigError):
        steps_from_budget(per_step - 1, cfg, batch_size=2)


def test_resolve_steps():
    cfg = ModelConfig(kind="transformer", dim=128, layers=1, context=64)
    assert resolve_steps(TrainConfig(steps=9), cfg) == 9
    budget = TrainConfig(batch_size=2, flop_budget=3.0 * 491_520 * 2 * 64 * 4)
    assert resolve_steps(budget, cfg) == 4
    with pytest.raises(ConfigError):
        resolve_steps(TrainConfig(), cfg)
    with pytest.raises(ConfigError):
        resolve_steps(TrainConfig(steps=0), cfg)


# -- gradient clipping -------------------------------------------------------------


def _leaf(values):
    return Tensor(np.asarray(values, dtype=np.float32), requires_grad=True)


def test_clip_gradients_scales_to_unit_norm():
    p = _leaf([0.0, 0.0])
    p._grad = np.array([3.0, 4.0], dtype=np.float32)
    norm = clip_gradients({"p": p}, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(p._grad, [0.6, 0.8], rtol=1e-6)


def test_clip_gradients_leaves_small_grads_alone():
    p = _leaf([0.0])
    p._grad = np.array([0.5], dtype=np.float32)
    assert clip_gradients({"p": p}, 1.0) == pytest.approx(0.5)
    assert p._grad[0] == np.float32(0.5)
    q = _leaf([0.0])
    q._grad = np.array([100.0], dtype=np.float32)
    clip_gradients({"q": q}, None)
    assert q._grad[0] == np.float32(100.0)


def test_clip_gradients_nonfinite_raises():
    p = _leaf([0.0])
    p._grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NumericError):
        clip_gradients({"p": p}, 1.0)


# -- AdamW -------------------------------------------------------------------------


def test_adamw_first_step_closed_form():
    p = _leaf(np.zeros(3))
    p._grad = np.ones(3, dtype=np.float32)
    opt = AdamW({"p": p}, {"p": 0.5}, weight_decay=0.0)
    opt.step(0.1)
    np.testing.assert_allclose(p.data, -0.1 * 0.5 / (1 + 1e-8), rtol=1e-6)


def test_adamw_step_ratio_follows_lr_scale():
    a, b = _leaf(np.zeros(2)), _leaf(np.zeros(2))
    a._grad = np.ones(2, dtype=np.float32)
    b._grad = np.ones(2, dtype=np.float32)
    opt = AdamW({"a": a, "b": b}, {"a": 1.0, "b": 1.0 / 32.0}, weight_decay=0.0)
    opt.step(0.08)
    np.testing.assert_allclose(a.data / b.data, 32.0, rtol=1e-5)


def test_adamw_weight_decay_is_decoupled():
    p = _leaf([2.0])
    p._grad = np.zeros(1, dtype=np.float32)
    opt = AdamW({"p": p}, {"p": 1.0}, weight_decay=0.01)
    opt.step(0.1)
    # zero gradient: only the decay moves the parameter
    np.testing.assert_allclose(p.data, [2.0 * (1 - 0.1 * 0.01)], rtol=1e-6)


def test_adamw_second_step_bias_correction():
    p = _leaf([0.0])
    opt = AdamW({"p": p}, {"p": 1.0}, beta1=0.9, beta2=0.98, weight_decay=0.0)
    p._grad = np.ones(1, dtype=np.float32)
    opt.step(0.1)
    p._grad = np.ones(1, dtype=np.float32)
    opt.step(0.1)
    # constant unit gradient keeps mhat = vhat = 1 at every step
    np.testing.assert_allclose(p.data, [-0.2 / (1 + 1e-8)], rtol=1e-5)


def test_adamw_requires_scale_for_every_param():
    p = _leaf([0.0])
    with pytest.raises(ConfigError):
        AdamW({"p": p}, {})


def test_adamw_for_model_uses_init_sigmas():
    cfg = ModelConfig(kind="transformer", dim=64, layers=1, context=8)
    model = build_model(cfg, np.random.default_rng(0))
    opt = AdamW.for_model(model, TrainConfig(steps=1))
    assert opt.lr_scale["embed"] == 1.0
    assert opt.lr_scale["deembed"] == pytest.approx(64**-0.5)


# -- evaluation --------------------------------------------------------------------


def _text_corpus(n_copies=30):
    docs = [b"the quick brown fox jumps over the lazy dog. " * 3] * n_copies
    return build_corpus(docs)


def test_eval_bpb_uniform_logits_is_eight_bits():
    cfg = ModelConfig(kind="transformer", dim=64, layers=1, context=32)
    model = build_model(cfg, np.random.default_rng(0))
    model.params["deembed"].data[:] = 0.0
    res = eval_bpb(model, _text_corpus(), limit=4)
    assert res.bpb == pytest.approx(8.0, abs=1e-9)
    assert res.n_windows == 4
    assert res.total_bytes == 4 * 32


def test_eval_bpb_byte_lengths_rescale():
    cfg = ModelConfig(kind="transformer", dim=64, layers=1, context=32)
    model = build_model(cfg, np.random.default_rng(0))
    model.params["deembed"].data[:] = 0.0
    res = eval_bpb(model, _text_corpus(), limit=4, byte_lengths=np.full(256, 2))
    assert res.bpb == pytest.approx(4.0, abs=1e-9)
    assert res.total_bytes == 2 * 4 * 32


def test_eval_bpb_batch_size_invariant():
    cfg = ModelConfig(kind="transformer", dim=64, layers=1, context=32)
    model = build_model(cfg, np.random.default_rng(1))
    a = eval_bpb(model, _text_corpus(), limit=6, batch_size=2)
    b = eval_bpb(model, _text_corpus(), limit=6, batch_size=5)
    assert a.bpb == b.bpb
    assert a.total_nats == b.total_nats


def test_eval_bpb_too_small_corpus():
    cfg = ModelConfig(kind="transformer", dim=64, layers=1, context=4096)
    model = build_model(cfg, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        eval_bpb(model, build_corpus([b"tiny"]))


# -- the loop ----------------------------------------------------------------------


def _tiny_model_cfg():
    return ModelConfig(kind="transformer", dim=64, layers=1, context=32)


def _tiny_train_cfg(**kw):
    base = dict(batch_size=2, steps=6, eval_every=3, eval_windows=2, seed=11)
    base.update(kw)
    return TrainConfig(**base)


def test_train_loop_writes_artifacts(tmp_path):
    corpus = _text_corpus()
    res = train_loop(_tiny_model_cfg(), _tiny_train_cfg(), corpus, tmp_path / "run",
                     eval_corpus=corpus)
    assert res.steps == 6
    assert math.isfinite(res.final_loss)
    assert res.final_eval is not None
    lines = res.metrics_path.read_text().strip().split("\n")
    assert lines[0] == "step,lr,train_loss,grad_norm,eval_bpb,eval_stderr"
    assert len(lines) == 7
    # eval columns fill at the cadence row and on the final row
    assert lines[3].split(",")[4] != ""
    assert lines[1].split(",")[4] == ""
    assert lines[6].split(",")[4] != ""
    run = json.loads(res.run_path.read_text())
    assert run["steps"] == 6
    assert run["matrix_params"] == 12 * 64 * 64 + 64 * 256
    assert run["final_eval_bpb"] == res.final_eval.bpb
    assert res.checkpoint_path.exists()


def test_train_loop_reproducible_and_seed_sensitive(tmp_path):
    corpus = _text_corpus()
    r1 = train_loop(_tiny_model_cfg(), _tiny_train_cfg(), corpus, tmp_path / "a",
                    eval_corpus=corpus)
    r2 = train_loop(_tiny_model_cfg(), _tiny_train_cfg(), corpus, tmp_path / "b",
                    eval_corpus=corpus)
    assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()
    assert r1.checkpoint_path.read_bytes() == r2.checkpoint_path.read_bytes()
    r3 = train_loop(_tiny_model_cfg(), _tiny_train_cfg(seed=12), corpus, tmp_path / "c",
                    eval_corpus=corpus)
    assert r1.metrics_path.read_bytes() != r3.metrics_path.read_bytes()


def test_train_loop_loss_decreases_on_repetitive_text(tmp_path):
    corpus = build_corpus([b"abab" * 64] * 8)
    cfg = _tiny_train_cfg(steps=40, eval_every=None)
    res = train_loop(_tiny_model_cfg(), cfg, corpus, tmp_path / "run")
    lines = res.metrics_path.read_text().strip().split("\n")
    first = float(lines[1].split(",")[2])
    assert res.final_loss < 0.5 * first


def test_checkpoint_reload_evaluates_identically(tmp_path):
    from bytelm.checkpoint import load_checkpoint

    corpus = _text_corpus()
    res = train_loop(_tiny_model_cfg(), _tiny_train_cfg(), corpus, tmp_path / "run",
                     eval_corpus=corpus)
    reloaded = load_checkpoint(res.checkpoint_path)
    again = eval_bpb(reloaded, corpus, limit=2, batch_size=8)
    assert again.bpb == res.final_eval.bpb
    assert again.total_nats == res.final_eval.total_nats


def test_train_loop_saves_diagnostic_on_numeric_error(tmp_path, monkeypatch):
    real_build = train_mod.build_model

    def poisoned(cfg, rng):
        model = real_build(cfg, rng)
        model.params["embed"].data[:] = np.nan
        return model

    monkeypatch.setattr(train_mod, "build_model", poisoned)
    corpus = _text_corpus()
    with pytest.raises(NumericError):
        train_loop(_tiny_model_cfg(), _tiny_train_cfg(), corpus, tmp_path / "run")
    assert (tmp_path / "run" / "diagnostic.bin").exists()
    text = (tmp_path / "run" / "metrics.csv").read_text()
    assert "aborted" in text


def test_train_loop_respects_flop_budget(tmp_path):
    corpus = _text_corpus()
    per_step = 3.0 * (2 * (12 * 64 * 64 + 64 * 256) + 4 * 32 * 64) * 2 * 32
    cfg = _tiny_train_cfg(steps=None, flop_budget=3 * per_step + 1, eval_every=None)
    res = train_loop(_tiny_model_cfg(), cfg, corpus, tmp_path / "run")
    assert res.steps == 3
