import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swin2sr import tensor as T
from swin2sr.codec.resize import resize_array
from swin2sr.model import (
    ConfigError,
    ModelConfig,
    Swin2SR,
    count_macs,
    count_params,
    mac_breakdown,
    output_to_input_size,
    pixel_shuffle,
    pixel_unshuffle,
    preset,
    zero_network,
)
from swin2sr.nn import Conv2d
from swin2sr.tensor import ShapeError, Tensor, UsageError


def micro(**kw):
    return preset("micro", **kw)


def run(model, x, scale=None):
    with T.no_grad():
        return model(x, scale).data


# -- config -----------------------------------------------------------------
def test_config_json_roundtrip():
    cfg = preset("lightweight", scale=3)
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    assert set(json.loads(cfg.to_json())) == {
        "rstb_count", "layers_per_rstb", "window", "channels", "heads", "mlp_ratio",
        "scale", "upsampler", "bicubic_skip", "in_channels"}


@pytest.mark.parametrize("bad", [
    {"channels": 10, "heads": 3},
    {"scale": 1},
    {"scale": 2, "upsampler": "none"},
    {"scale": 5},
    {"window": 7},
    {"in_channels": 2},
    {"upsampler": "deconv"},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ModelConfig.from_json('{"channels": 60, "dropout": 0.1}')
    with pytest.raises(ConfigError):
        ModelConfig.from_json("[1, 2]")


def test_presets():
    assert preset("base") == ModelConfig()
    lw = preset("lightweight")
    assert (lw.rstb_count, lw.layers_per_rstb, lw.window, lw.channels, lw.heads) == (4, 6, 8, 60, 6)
    with pytest.raises(ConfigError):
        preset("huge")


# -- pixel shuffle ----------------------------------------------------------
def test_pixel_shuffle_definition():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
    np.testing.assert_array_equal(pixel_shuffle(x, 2).data[0, 0], [[1, 2], [3, 4]])


def test_pixel_shuffle_index_law(rng):
    r, C, H, W = 3, 2, 2, 3
    x = rng.random((1, r * r * C, H, W))
    out = pixel_shuffle(Tensor(x, dtype=np.float64), r).data
    for c in range(C):
        for i in range(H):
            for j in range(W):
                for a in range(r):
                    for b in range(r):
                        assert out[0, c, r * i + a, r * j + b] == x[0, c * r * r + a * r + b, i, j]


def test_pixel_shuffle_bad_channels():
    with pytest.raises(ShapeError):
        pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_pixel_shuffle_bijection(r, C, H, W, seed):
    x = np.random.default_rng(seed).random((2, r * r * C, H, W)).astype(np.float32)
    y = pixel_shuffle(Tensor(x), r)
    assert y.shape == (2, C, H * r, W * r)
    assert np.array_equal(np.sort(y.data, axis=None), np.sort(x, axis=None))
    assert pixel_unshuffle(y, r).data.tobytes() == x.tobytes()


# -- parameters and MACs ------------------------------------------------------
def test_param_ranges():
    assert 11e6 <= count_params(preset("base")) <= 13e6
    assert 0.9e6 <= count_params(preset("lightweight")) <= 1.1e6


def test_single_conv_closed_form():
    conv = Conv2d(3, 180, 3, rng=np.random.default_rng(0))
    assert conv.num_parameters() == 5040
    x = Tensor(np.zeros((1, 3, 10, 12), dtype=np.float32))
    with T.tally_macs() as tally:
        conv(x)
    assert tally.total == 4860 * 10 * 12


@pytest.mark.parametrize("cfg", [
    preset("micro"),
    preset("micro", scale=3),
    preset("micro", scale=4),
    preset("micro", scale=1, upsampler="none", bicubic_skip=False),
    preset("micro", upsampler="dynamic"),
    preset("micro", in_channels=1),
    preset("tiny"),
])
def test_counters_match_instrumented_forward(cfg):
    model = Swin2SR(cfg)
    assert model.num_parameters() == count_params(cfg)
    for H, W in ((12, 20), (9, 13)):
        x = np.random.default_rng(0).random((1, cfg.in_channels, H, W)).astype(np.float32)
        with T.no_grad(), T.tally_macs() as tally:
            model(x)
        assert tally.total == count_macs(cfg, H, W)


def test_dynamic_counts_only_the_executed_head():
    cfg = micro(upsampler="dynamic")
    model = Swin2SR(cfg)
    x = np.zeros((1, 3, 8, 8), dtype=np.float32)
    tallies = {}
    for r in (2, 3, 4):
        with T.no_grad(), T.tally_macs() as tally:
            out = model(x, r).data
        assert out.shape == (1, 3, 8 * r, 8 * r)
        assert tally.total == count_macs(cfg, 8, 8, r)
        tallies[r] = tally.total
    assert tallies[2] < tallies[3] < tallies[4]
    with pytest.raises(UsageError):
        model(x, 5)


def test_mac_breakdown_sums():
    cfg = preset("lightweight")
    parts = mac_breakdown(cfg, 360, 640)
    assert sum(parts.values()) == count_macs(cfg, 360, 640)
    assert output_to_input_size(cfg, 720, 1280) == (360, 640)


# -- structure ------------------------------------------------------------------
def test_x4_is_two_x2_stages():
    model = Swin2SR(micro(scale=4))
    assert model.upsample.stages == [2, 2]
    assert [c.weight.shape for c in model.upsample.convs] == [(12, 8, 3, 3), (12, 3, 3, 3)]


def test_rstb_shift_pattern():
    model = Swin2SR(preset("micro", layers_per_rstb=4))
    assert [layer.shift for layer in model.rstbs[0].layers] == [0, 2, 0, 2]


@pytest.mark.parametrize("H,W", [(16, 16), (37, 41), (5, 3), (40, 56)])
@pytest.mark.parametrize("r", [2, 3])
def test_shape_law(H, W, r):
    out = run(Swin2SR(micro(scale=r)), np.random.default_rng(0).random((1, 3, H, W)))
    assert out.shape == (1, 3, H * r, W * r)


def test_divisible_input_is_not_padded(monkeypatch):
    calls = []
    orig = T.pad_reflect

    def spy(x, ph, pw):
        calls.append((ph, pw))
        return orig(x, ph, pw)

    monkeypatch.setattr(T, "pad_reflect", spy)
    model = Swin2SR(preset("tiny"))
    run(model, np.zeros((1, 3, 40, 56), dtype=np.float32))
    run(model, np.zeros((1, 3, 37, 41), dtype=np.float32))
    assert calls == [(0, 0), (3, 7)]


def test_jpeg_config_keeps_size():
    out = run(Swin2SR(preset("micro", scale=1, upsampler="none", bicubic_skip=False)), np.zeros((1, 3, 9, 14)))
    assert out.shape == (1, 3, 9, 14)


def test_wrong_channels():
    with pytest.raises(ShapeError):
        run(Swin2SR(micro()), np.zeros((1, 1, 8, 8)))


def test_fixed_scale_model_rejects_other_factor():
    with pytest.raises(UsageError):
        run(Swin2SR(micro()), np.zeros((1, 3, 8, 8)), 3)


def test_shallow_zero_input_zero_bias():
    model = Swin2SR(micro())
    model.conv_first.bias.data[:] = 0
    out = model.shallow(Tensor(np.zeros((1, 3, 6, 7), dtype=np.float32)))
    assert out.shape == (1, 8, 6, 7) and not out.data.any()


def test_deep_residual_passthrough(rng):
    model = zero_network(Swin2SR(micro()))
    feat = Tensor(rng.random((1, 8, 8, 12)).astype(np.float32))
    with T.no_grad():
        np.testing.assert_array_equal(model.deep(feat).data, feat.data)


@pytest.mark.parametrize("r", [2, 3, 4])
def test_zero_network_is_bicubic(r, rng):
    lq = rng.random((1, 3, 11, 9)).astype(np.float32)
    out = run(zero_network(Swin2SR(micro(scale=r))), lq)
    ref = resize_array(lq.astype(np.float64), 11 * r, 9 * r)
    assert np.abs(out - ref).max() < 1e-6


def test_zero_network_without_skip_is_zero(rng):
    out = run(zero_network(Swin2SR(micro(bicubic_skip=False))), rng.random((1, 3, 8, 8)))
    assert not out.any()


def test_gray_model(rng):
    cfg = micro(in_channels=1)
    out = run(Swin2SR(cfg), rng.random((2, 1, 8, 8)))
    assert out.shape == (2, 1, 16, 16)


def test_seeded_init_and_forward_bit_identical(rng):
    x = rng.random((1, 3, 12, 12)).astype(np.float32)
    a, b = Swin2SR(preset("tiny"), seed=4), Swin2SR(preset("tiny"), seed=4)
    assert run(a, x).tobytes() == run(b, x).tobytes()
    assert run(Swin2SR(preset("tiny"), seed=5), x).tobytes() != run(a, x).tobytes()


def test_state_dict_roundtrip():
    a, b = Swin2SR(micro(), seed=1), Swin2SR(micro(), seed=2)
    b.load_state_dict(a.state_dict())
    x = np.ones((1, 3, 8, 8), dtype=np.float32) * 0.5
    assert run(a, x).tobytes() == run(b, x).tobytes()
    with pytest.raises(ShapeError):
        Swin2SR(micro(channels=4), seed=0).load_state_dict(a.state_dict())
