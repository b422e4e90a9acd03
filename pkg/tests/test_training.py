"""Trainer tests: Adam update rules, determinism, validation purity."""

import numpy as np
import pytest

from slideqa import autodiff as ad
from slideqa.autodiff import Tensor
from slideqa.model import ModelConfig, ModelParams, init_params
from slideqa.training import (
    AdamState,
    EmptyDataset,
    MissingBag,
    NonFiniteGradient,
    TrainConfig,
    adam_step,
    evaluate_nll,
    train,
)

from corpus import BASE_TEMPLATE, build_corpus


def single_param(value, grad):
    cfg = ModelConfig(vocab_size=5, enc_layers=1, dec_layers=1, hidden=4,
                      heads=1, word_dim=4, max_text=4)
    t = Tensor(np.array([value], dtype=np.float32), requires_grad=True)
    if grad is not None:
        t.grad = np.array([grad], dtype=np.float32)
    params = ModelParams(cfg, {"p": t})
    return params, AdamState(params)


def test_adam_zero_grad_zero_wd_keeps_parameter():
    params, state = single_param(1.5, 0.0)
    adam_step(params, state, TrainConfig(weight_decay=0.0))
    assert float(params["p"].data[0]) == 1.5


def test_adam_first_update_magnitude_is_lr():
    # bias-corrected ratio is 1 on step 1, so |update| = lr to within eps
    params, state = single_param(0.0, 0.37)
    cfg = TrainConfig(lr=1e-2, weight_decay=0.0)
    adam_step(params, state, cfg)
    assert abs(abs(float(params["p"].data[0])) - cfg.lr) < 1e-6
    assert float(params["p"].data[0]) < 0  # moves against the gradient


def test_adam_decay_only_shrinks_parameter():
    params, state = single_param(2.0, 0.0)
    cfg = TrainConfig(lr=1e-2, weight_decay=0.5)
    adam_step(params, state, cfg)
    assert float(params["p"].data[0]) == pytest.approx(2.0 * (1 - cfg.lr * cfg.weight_decay), rel=1e-6)


def test_adam_rejects_nonfinite_gradient_atomically():
    params, state = single_param(1.0, np.nan)
    with pytest.raises(NonFiniteGradient):
        adam_step(params, state, TrainConfig())
    assert float(params["p"].data[0]) == 1.0  # untouched
    assert state.t == 0


def micro_setup(max_steps=30, lr=1e-3, **over):
    c = build_corpus(dim=16)
    cfg = ModelConfig(vocab_size=c["vocab"].size, enc_layers=1, dec_layers=1,
                      hidden=16, heads=2, word_dim=16, max_text=32, max_bag=32)
    kwargs = dict(lr=lr, max_steps=max_steps, seed=3,
                  resample_templates=False, eval_every=10)
    kwargs.update(over)
    return c, cfg, TrainConfig(**kwargs)


def test_train_rejects_empty_and_missing():
    c, cfg, tc = micro_setup()
    with pytest.raises(EmptyDataset):
        train([], c["bags"], c["vocab"], tc, cfg)
    with pytest.raises(MissingBag):
        train(c["samples"], {}, c["vocab"], tc, cfg)


def test_zero_lr_zero_wd_leaves_parameters():
    c, cfg, tc = micro_setup(max_steps=5, lr=0.0, weight_decay=0.0)
    res = train(c["samples"], c["bags"], c["vocab"], tc, cfg)
    fresh = init_params(cfg, seed=tc.seed)
    for name, t in res.params.named():
        np.testing.assert_array_equal(t.data, fresh[name].data)


def test_fixed_seed_bitwise_identical_trajectory():
    c, cfg, tc = micro_setup(max_steps=100)
    a = train(c["samples"], c["bags"], c["vocab"], tc, cfg)
    b = train(c["samples"], c["bags"], c["vocab"], tc, cfg)
    assert [x[1] for x in a.curve] == [x[1] for x in b.curve]
    assert a.params.checksum() == b.params.checksum()


def test_loss_trend_improves():
    c, cfg, tc = micro_setup(max_steps=400)
    res = train(c["samples"], c["bags"], c["vocab"], tc, cfg)
    losses = [l for _, l, _ in res.curve]
    assert np.mean(losses[-50:]) < np.mean(losses[:50])


def test_validation_never_mutates_parameters():
    c, cfg, tc = micro_setup(max_steps=5)
    res = train(c["samples"], c["bags"], c["vocab"], tc, cfg)
    before = res.params.checksum()
    evaluate_nll(c["samples"][:4], c["bags"], c["vocab"], res.params, cfg)
    assert res.params.checksum() == before


def test_best_checkpoint_tracks_validation():
    c, cfg, tc = micro_setup(max_steps=40)
    val = c["samples"][:4]
    res = train(c["samples"], c["bags"], c["vocab"], tc, cfg, val_samples=val)
    assert res.best_step > 0
    assert np.isfinite(res.best_val_loss)
    got = evaluate_nll(val, c["bags"], c["vocab"], res.best_params, cfg)
    assert got == pytest.approx(res.best_val_loss, rel=1e-6)


def test_template_resampling_leaves_samples_untouched():
    c, cfg, tc = micro_setup(max_steps=30, resample_templates=True)
    snapshot = [(s.question, s.answer, s.entity_key) for s in c["samples"]]
    templates = [BASE_TEMPLATE, "Q: What is the [KEY] status of this slide? A: [VALUE]"]
    train(c["samples"], c["bags"], c["vocab"], tc, cfg, templates=templates)
    assert [(s.question, s.answer, s.entity_key) for s in c["samples"]] == snapshot


def test_template_resampling_changes_the_curve_only_via_questions():
    # same seed, same data: resampling on vs off must differ through the
    # question surface (different losses) while both stay finite
    c, cfg, tc_off = micro_setup(max_steps=30)
    templates = [BASE_TEMPLATE, "Q: What does the slide show for [KEY]? A: [VALUE]"]
    res_off = train(c["samples"], c["bags"], c["vocab"], tc_off, cfg, templates=templates)
    _, _, tc_on = micro_setup(max_steps=30, resample_templates=True)
    res_on = train(c["samples"], c["bags"], c["vocab"], tc_on, cfg, templates=templates)
    assert [x[1] for x in res_on.curve] != [x[1] for x in res_off.curve]
    assert all(np.isfinite(x[1]) for x in res_on.curve)


def test_batch_accumulation_runs():
    c, cfg, tc = micro_setup(max_steps=10, batch_size=3)
    res = train(c["samples"], c["bags"], c["vocab"], tc, cfg)
    assert len(res.curve) == 10
