import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cellseg.errors import ConfigError, NonFiniteLossError
from cellseg.model import UNetConfig, build_unet, sigmoid
from cellseg.synthdata import SynthConfig, generate
from cellseg.training import Adam, TrainConfig, bce_logit_grad, bce_loss, train
from oracles import bce_loop


def test_bce_examples():
    assert bce_loss(np.array([1.0]), np.array([1.0])) == pytest.approx(1e-7, rel=1e-3)
    assert bce_loss(np.array([0.5]), np.array([0.0])) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(np.array([0.9]), np.array([1.0])) == pytest.approx(0.105361, abs=1e-6)
    assert bce_loss(np.array([0.0]), np.array([1.0])) == pytest.approx(-math.log(1e-7), rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(0, 1)), arrays(np.int8, 20, elements=st.integers(0, 1)))
def test_bce_matches_loop(pred, target):
    assert bce_loss(pred, target.astype(np.float64)) == pytest.approx(bce_loop(pred, target), abs=1e-9)


def test_logit_gradient_is_p_minus_y_over_n():
    gen = np.random.default_rng(0)
    z = gen.normal(size=12)
    y = (gen.random(12) > 0.5).astype(np.float64)
    g = bce_logit_grad(sigmoid(z), y)
    np.testing.assert_allclose(g, (sigmoid(z) - y) / 12, atol=1e-15)
    h = 1e-6
    for i in range(12):
        dz = np.zeros(12)
        dz[i] = h
        numeric = (bce_loss(sigmoid(z + dz), y) - bce_loss(sigmoid(z - dz), y)) / (2 * h)
        assert g[i] == pytest.approx(numeric, abs=1e-6)


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(batch_size=0), dict(epochs=-1),
                                dict(adam_beta1=1.0), dict(loss="dice"), dict(checkpoint_every=-2)])
def test_invalid_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_adam_zero_gradient_leaves_weights():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(p, lr=0.1)
    for _ in range(3):
        opt.step({"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_has_magnitude_lr():
    p = {"w": np.array([1.0, 1.0])}
    Adam(p, lr=0.01, eps=0).step({"w": np.array([3.0, -0.2])})
    np.testing.assert_allclose(p["w"], [0.99, 1.01], atol=1e-12)


def test_zero_epochs_returns_initial_weights(tiny_cfg, toy_ds):
    model = build_unet(tiny_cfg)
    trained, history = train(model, toy_ds(2), TrainConfig(epochs=0))
    assert len(history) == 0
    for k in model.params:
        np.testing.assert_array_equal(trained.params[k], model.params[k])


def test_train_does_not_mutate_input(tiny_cfg, toy_ds):
    model = build_unet(tiny_cfg)
    before = {k: v.copy() for k, v in model.params.items()}
    train(model, toy_ds(2), TrainConfig(epochs=2))
    for k in before:
        np.testing.assert_array_equal(model.params[k], before[k])


def test_same_seed_is_bit_identical(tiny_cfg, toy_ds):
    ds = toy_ds(5)
    runs = [train(build_unet(tiny_cfg), ds, TrainConfig(epochs=3, seed=4)) for _ in range(2)]
    assert runs[0][1].losses == runs[1][1].losses
    for k in runs[0][0].params:
        np.testing.assert_array_equal(runs[0][0].params[k], runs[1][0].params[k])
    other, _ = train(build_unet(tiny_cfg), ds, TrainConfig(epochs=3, seed=5))
    assert not np.array_equal(other.params["head.weight"], runs[0][0].params["head.weight"])


def test_loss_decreases():
    ds = generate(SynthConfig(n_images=4, height=32, width=32, noise_sigma=0.0, seed=2))
    model = build_unet(UNetConfig(in_channels=1, depth=1, base_filters=4, seed=1))
    _, history = train(model, ds, TrainConfig(epochs=30, learning_rate=1e-3))
    assert np.mean(history.losses[-3:]) < np.mean(history.losses[:3])


def test_non_finite_loss_raises(tiny_cfg, toy_ds):
    model = build_unet(tiny_cfg)
    model.params["head.bias"][...] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        train(model, toy_ds(2), TrainConfig(epochs=2))
    assert info.value.epoch == 1 and info.value.batch == 0


def test_channel_mismatch_is_rejected(tiny_cfg, toy_ds):
    from cellseg.errors import ShapeError

    with pytest.raises(ShapeError):
        train(build_unet(tiny_cfg), toy_ds(2, c=3), TrainConfig(epochs=1))


def test_periodic_checkpoints(tmp_path, tiny_cfg, toy_ds):
    train(build_unet(tiny_cfg), toy_ds(2), TrainConfig(epochs=4, checkpoint_every=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0002.ckpt", "epoch_0004.ckpt"]


def test_history_csv(tiny_cfg, toy_ds):
    _, history = train(build_unet(tiny_cfg), toy_ds(2), TrainConfig(epochs=2))
    lines = history.to_csv().splitlines()
    assert lines[0].split(",")[:2] == ["epoch", "mean_loss"]
    assert len(lines) == 3
