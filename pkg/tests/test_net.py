"""Denoiser network: config rules, time embedding, adaptive group norm,
U-Net shape behavior, preconditioned forward, and the structural
boundary identity."""

import numpy as np
import pytest

from helpers import fd_gradcheck
from relight.errors import ShapeError
from relight.net import (FOURIER_FREQ_HI, FOURIER_FREQ_LO, DenoiserConfig,
                         DenoiserModel, adagn, denoiser_forward,
                         fourier_time_embedding, unet_forward)
from relight.sampling import make_rng
from relight.schedule import NoiseSchedule
from relight.tensor import Tensor, backward


def small_config(out_channels=1):
    return DenoiserConfig(in_channels=out_channels + 3,
                          out_channels=out_channels, base_width=8,
                          fourier_bands=4)


# -- config -------------------------------------------------------------------

def test_config_channel_rule():
    cfg = DenoiserConfig(in_channels=6, out_channels=3)
    assert cfg.n_levels == 3
    assert cfg.downsample_factor == 4
    assert cfg.time_dim == 64
    assert cfg.widths() == [16, 32, 64]
    with pytest.raises(ValueError):
        DenoiserConfig(in_channels=5, out_channels=3)
    with pytest.raises(ValueError):
        DenoiserConfig(in_channels=6, out_channels=3, base_width=12)  # % groups
    with pytest.raises(ValueError):
        DenoiserConfig(in_channels=6, out_channels=3, channel_multipliers=())
    with pytest.raises(ValueError):
        DenoiserConfig(in_channels=6, out_channels=3, fourier_bands=0)


def test_config_dict_round_trip():
    cfg = DenoiserConfig(in_channels=4, out_channels=1, base_width=8,
                         channel_multipliers=(1, 2), fourier_bands=6)
    assert DenoiserConfig.from_dict(cfg.to_dict()) == cfg


# -- time embedding -------------------------------------------------------------

def test_fourier_embedding_matches_formula():
    bands = 5
    emb = fourier_time_embedding(3.7, bands).data
    freqs = np.geomspace(FOURIER_FREQ_LO, FOURIER_FREQ_HI, bands)
    ang = 2.0 * np.pi * freqs * np.log(3.7)
    np.testing.assert_allclose(emb, np.concatenate([np.sin(ang), np.cos(ang)]),
                               rtol=1e-14)
    assert emb.shape == (2 * bands,)


def test_fourier_embedding_at_sigma_one():
    emb = fourier_time_embedding(1.0, 8).data  # ln 1 = 0
    np.testing.assert_array_equal(emb[:8], np.zeros(8))
    np.testing.assert_array_equal(emb[8:], np.ones(8))


def test_fourier_embedding_rejects_bad_args():
    with pytest.raises(ValueError):
        fourier_time_embedding(0.0, 4)
    with pytest.raises(ValueError):
        fourier_time_embedding(1.0, 0)


# -- adagn ------------------------------------------------------------------------

def test_adagn_with_zero_projections_is_plain_group_norm():
    from relight.tensor import group_norm
    rng = make_rng(0)
    h = Tensor(rng.normal(size=(2, 8, 4, 4)))
    t_emb = Tensor(rng.normal(size=6))
    zw = Tensor(np.zeros((8, 6)))
    zb = Tensor(np.zeros(8))
    out = adagn(h, t_emb, zw, zb, zw, zb, groups=4)
    np.testing.assert_array_equal(out.data, group_norm(h, 4).data)


def test_adagn_applies_learned_scale_and_shift():
    from relight.tensor import group_norm
    rng = make_rng(1)
    h = Tensor(rng.normal(size=(1, 4, 3, 3)))
    t_emb = Tensor(np.array([1.0, 2.0]))
    gamma_w = Tensor(rng.normal(size=(4, 2)))
    gamma_b = Tensor(rng.normal(size=4))
    beta_w = Tensor(rng.normal(size=(4, 2)))
    beta_b = Tensor(rng.normal(size=4))
    out = adagn(h, t_emb, gamma_w, gamma_b, beta_w, beta_b, groups=2)
    gamma = gamma_w.data @ t_emb.data + gamma_b.data
    beta = beta_w.data @ t_emb.data + beta_b.data
    ref = (group_norm(h, 2).data * (1.0 + gamma)[None, :, None, None]
           + beta[None, :, None, None])
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


# -- model and forward ------------------------------------------------------------

def test_create_is_deterministic_per_seed():
    cfg = small_config()
    a = DenoiserModel.create(cfg, make_rng(0, 1))
    b = DenoiserModel.create(cfg, make_rng(0, 1))
    c = DenoiserModel.create(cfg, make_rng(0, 2))
    for name, t in a.params.items():
        np.testing.assert_array_equal(t.data, b.params[name].data)
    assert any(not np.array_equal(t.data, c.params[name].data)
               for name, t in a.params.items() if t.data.size > 1)


def test_ema_starts_as_copy_without_grad():
    model = DenoiserModel.create(small_config(), make_rng(0, 1))
    for name, t in model.params.items():
        shadow = model.ema_params[name]
        np.testing.assert_array_equal(t.data, shadow.data)
        assert t.requires_grad and not shadow.requires_grad


def test_create_without_rng_gives_zero_skeleton():
    model = DenoiserModel.create(small_config())
    assert all(np.all(t.data == 0.0) for _, t in model.params.items())


def test_unet_forward_shape_and_divisibility():
    cfg = small_config(out_channels=3)
    model = DenoiserModel.create(cfg, make_rng(0, 1))
    x = Tensor(np.zeros((2, 6, 8, 8)))
    out = unet_forward(model.params, cfg, x, sigma=1.0)
    assert out.shape == (2, 3, 8, 8)
    with pytest.raises(ShapeError):
        unet_forward(model.params, cfg, Tensor(np.zeros((2, 5, 8, 8))), 1.0)
    with pytest.raises(ShapeError) as exc:
        unet_forward(model.params, cfg, Tensor(np.zeros((2, 6, 10, 10))), 1.0)
    assert "pad to 12x12" in str(exc.value)


def test_fresh_model_raw_output_is_zero():
    # output conv starts at zero, so the residual branch is silent
    cfg = small_config()
    model = DenoiserModel.create(cfg, make_rng(3, 1))
    x = Tensor(make_rng(4).normal(size=(1, 4, 8, 8)))
    out = unet_forward(model.params, cfg, x, sigma=2.0)
    assert np.all(out.data == 0.0)


def test_denoiser_forward_composition_and_counter():
    cfg = small_config()
    sched = NoiseSchedule()
    model = DenoiserModel.create(cfg, make_rng(5, 1))
    rng = make_rng(6)
    x = Tensor(rng.normal(size=(2, 1, 8, 8)))
    cond = Tensor(rng.uniform(0, 1, size=(2, 3, 8, 8)))
    assert model.forward_calls == 0
    out = denoiser_forward(model, x, 80.0, cond, sched)
    assert model.forward_calls == 1
    c_skip, c_out, c_in = sched.precondition(80.0)
    from relight.tensor import concat_channels
    raw = unet_forward(model.params, cfg, concat_channels(cond, x * c_in), 80.0)
    np.testing.assert_allclose(out.data, x.data * c_skip + raw.data * c_out,
                               atol=1e-14)
    denoiser_forward(model, x, 80.0, cond, sched, use_ema=True)
    assert model.forward_calls == 2


def test_boundary_identity_structural():
    cfg = small_config()
    sched = NoiseSchedule()
    rng = make_rng(7)
    for trial in range(5):
        model = DenoiserModel.create(cfg, make_rng(trial, 1))
        x = Tensor(rng.normal(size=(1, 1, 8, 8)))
        cond = Tensor(rng.uniform(0, 1, size=(1, 3, 8, 8)))
        out = denoiser_forward(model, x, sched.epsilon, cond, sched)
        assert np.abs(out.data - x.data).max() == 0.0


def test_ema_forward_builds_no_graph():
    model = DenoiserModel.create(small_config(), make_rng(8, 1))
    sched = NoiseSchedule()
    x = Tensor(np.zeros((1, 1, 8, 8)))
    cond = Tensor(np.zeros((1, 3, 8, 8)))
    out = denoiser_forward(model, x, 1.0, cond, sched, use_ema=True)
    assert not out.requires_grad


def test_denoiser_forward_validation():
    model = DenoiserModel.create(small_config(), make_rng(9, 1))
    sched = NoiseSchedule()
    good_x = Tensor(np.zeros((1, 1, 8, 8)))
    good_c = Tensor(np.zeros((1, 3, 8, 8)))
    with pytest.raises(ShapeError):
        denoiser_forward(model, Tensor(np.zeros((1, 2, 8, 8))), 1.0, good_c, sched)
    with pytest.raises(ShapeError):
        denoiser_forward(model, good_x, 1.0, Tensor(np.zeros((1, 1, 8, 8))), sched)
    with pytest.raises(ShapeError):
        denoiser_forward(model, good_x, 1.0, Tensor(np.zeros((1, 3, 4, 4))), sched)


def test_denoiser_gradcheck_end_to_end():
    cfg = small_config()
    sched = NoiseSchedule()
    model = DenoiserModel.create(cfg, make_rng(10, 1))
    rng = make_rng(11)
    x = Tensor(rng.normal(size=(1, 1, 8, 8)), requires_grad=True)
    cond = Tensor(rng.uniform(0, 1, size=(1, 3, 8, 8)))
    target = Tensor(rng.normal(size=(1, 1, 8, 8)))

    def loss():
        diff = denoiser_forward(model, x, 2.0, cond, sched) - target
        return (diff * diff).mean()

    picked = [x, model.params["stem.w"], model.params["enc1.block0.conv.b"],
              model.params["dec0.up.w"], model.params["time.fc1.w"],
              model.params["enc2.block1.gamma.w"], model.params["out.w"]]
    err = fd_gradcheck(loss, picked, samples=6)
    assert err < 1e-3
