import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umg.autodiff import DimensionError, NumericError, Tensor, backward, channel_stats, default_dtype
from umg.networks import build_encoder
from umg.style import (
    StyleLossConfig,
    adain,
    channel_stat_vector,
    content_loss,
    content_loss_from_features,
    disc_adv_loss,
    discriminator_objective,
    encode_stylized_target,
    gen_adv_loss,
    generator_objective,
    interpolate_features,
    style_loss,
)


@pytest.fixture(autouse=True)
def _float64():
    with default_dtype(np.float64):
        yield


class IdentityEncoder:
    """Single tap that passes the image straight through."""

    def taps(self, x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        return [x]


def _feat(rng, n=2, c=3, h=5, w=4, scale=1.0, shift=0.0):
    return Tensor(rng.normal(shift, scale, (n, c, h, w)))


def test_config_validation():
    StyleLossConfig()
    for bad in ({"alpha": 1.5}, {"lambda_c": 0}, {"lambda_s": -1}, {"prob_clamp": 0.5}, {"tap_indices": ()}):
        with pytest.raises(ValueError):
            StyleLossConfig(**bad)


def test_adain_hand_example():
    x = Tensor(np.array([0.0, 2.0, 0.0, 2.0]).reshape(1, 1, 2, 2))
    y = Tensor(np.array([8.0, 12.0, 8.0, 12.0]).reshape(1, 1, 2, 2))
    out = adain(x, y).data.ravel()
    assert np.allclose(out, [8, 12, 8, 12], atol=1e-4)


def test_adain_self_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = _feat(rng, scale=rng.uniform(0.1, 5), shift=rng.uniform(-3, 3))
        assert np.max(np.abs(adain(x, x).data - x.data)) < 1e-6


def test_adain_statistics_match_target():
    rng = np.random.default_rng(1)
    for _ in range(50):
        # the stabiliser shrinks the output std by about eps / (2 var(x)),
        # and var(y), so keep both well above eps
        x = _feat(rng, h=8, w=8, scale=rng.uniform(1.5, 3))
        y = _feat(rng, h=9, w=7, scale=rng.uniform(1.5, 3), shift=rng.uniform(-5, 5))
        out = adain(x, y, epsilon=1e-5)
        assert out.shape == x.shape
        mu_o, sd_o = channel_stats(out, 1e-5)
        mu_y, sd_y = channel_stats(y, 1e-5)
        assert np.allclose(mu_o.data, mu_y.data, rtol=1e-5, atol=1e-9)
        assert np.allclose(sd_o.data, sd_y.data, rtol=1e-5)


def test_adain_mismatch():
    rng = np.random.default_rng(2)
    with pytest.raises(DimensionError):
        adain(_feat(rng, c=3), _feat(rng, c=4))


def test_interpolation_endpoints_exact():
    rng = np.random.default_rng(3)
    f, t = _feat(rng), _feat(rng)
    assert np.array_equal(interpolate_features(f, t, 0.0).data, f.data)
    assert np.array_equal(interpolate_features(f, t, 1.0).data, t.data)
    assert np.allclose(interpolate_features(f, t, 0.5).data, (f.data + t.data) / 2, atol=1e-15)
    with pytest.raises(ValueError):
        interpolate_features(f, t, 1.2)


def test_style_loss_identity_encoder_hand_value():
    z = np.array([-1.0, 1.0, -1.0, 1.0]).reshape(1, 1, 2, 2)
    a, b = 1 + 2 * z, 4 + 6 * z  # stats (1, 2) and (4, 6)
    loss = style_loss(a, b, IdentityEncoder(), StyleLossConfig())
    assert abs(float(loss.data) - 7.0) < 1e-5


def test_style_loss_zero_case_and_shuffle_invariance():
    rng = np.random.default_rng(4)
    enc = IdentityEncoder()
    cfg = StyleLossConfig()
    a = rng.random((2, 1, 8, 8))
    b = rng.random((2, 1, 8, 8))
    assert float(style_loss(a, a, enc, cfg).data) < 1e-6
    base = float(style_loss(a, b, enc, cfg).data)
    perm = rng.permutation(64)
    shuffled = a.reshape(2, 1, 64)[:, :, perm].reshape(2, 1, 8, 8)
    assert abs(float(style_loss(shuffled, b, enc, cfg).data) - base) < 1e-9


def test_content_loss_hand_value_and_zero():
    s = Tensor(np.array([3.0, 0.0]).reshape(1, 2, 1, 1))
    t = Tensor(np.array([0.0, 4.0]).reshape(1, 2, 1, 1))
    assert abs(float(content_loss_from_features(s, t).data) - 5.0) < 1e-9
    assert float(content_loss_from_features(t, t).data) < 1e-5


def test_content_loss_gradient_reaches_image():
    enc = build_encoder(0)
    rng = np.random.default_rng(5)
    img = Tensor(rng.random((1, 1, 32, 32)), requires_grad=True)
    t = Tensor(rng.random((1, 128, 4, 4)))
    grads = backward(content_loss(img, t, enc))
    assert np.abs(grads[img]).sum() > 0
    assert all(p.grad is None for p in enc.params())


def test_real_encoder_zero_cases():
    enc = build_encoder(1)
    rng = np.random.default_rng(6)
    a = rng.random((2, 32, 32))
    cfg = StyleLossConfig()
    assert float(style_loss(a, a, enc, cfg).data) < 1e-6
    t = encode_stylized_target(a, a, enc)
    f = enc.taps(a)[-1]
    assert np.max(np.abs(t.data - f.data)) < 1e-6 * max(1.0, np.abs(f.data).max())
    assert float(content_loss_from_features(f, f).data) < 1e-5


def test_stylized_target_stats_and_asymmetry():
    enc = build_encoder(2)
    rng = np.random.default_rng(7)
    c = rng.random((1, 32, 32))
    s = 0.3 + 0.2 * rng.random((1, 32, 32))
    t = encode_stylized_target(c, s, enc)
    fs = enc.taps(s)[-1]
    # channels with real spread on both sides
    keep = (channel_stats(fs, 1e-5)[1].data > 1.0) & (channel_stats(enc.taps(c)[-1], 1e-5)[1].data > 1.0)
    got = channel_stat_vector(t)
    want = channel_stat_vector(fs)
    c_count = t.shape[1]
    assert np.allclose(got[:, :c_count][keep], want[:, :c_count][keep], rtol=1e-5, atol=1e-4)
    assert np.allclose(got[:, c_count:][keep], want[:, c_count:][keep], rtol=1e-5)
    swapped = encode_stylized_target(s, c, enc)
    assert not np.allclose(swapped.data, t.data)


def test_adversarial_constants():
    cfg = StyleLossConfig()
    half = Tensor(np.full(8, 0.5))
    assert abs(float(gen_adv_loss(half, cfg).data) - math.log(0.5)) < 1e-12
    assert abs(float(disc_adv_loss(half, half, cfg).data) + 2 * math.log(2)) < 1e-9
    real, fake = Tensor(np.full(4, 0.9)), Tensor(np.full(4, 0.1))
    assert abs(float(disc_adv_loss(real, fake, cfg).data) - 2 * math.log(0.9)) < 1e-12
    ns = StyleLossConfig(non_saturating=True)
    assert abs(float(gen_adv_loss(half, ns).data) - math.log(2)) < 1e-12


def test_disc_loss_constant_output_peaks_at_half():
    cfg = StyleLossConfig()
    grid = np.linspace(0.01, 0.99, 99)
    vals = [float(disc_adv_loss(Tensor(np.full(3, p)), Tensor(np.full(3, p)), cfg).data) for p in grid]
    assert np.isclose(grid[int(np.argmax(vals))], 0.5)


def test_probability_clamp_and_range_errors():
    cfg = StyleLossConfig()
    v = float(gen_adv_loss(Tensor(np.array([1.0, 1.0])), cfg).data)
    assert math.isfinite(v) and abs(v - math.log(1e-7)) < 1e-6
    v = float(disc_adv_loss(Tensor(np.zeros(2)), Tensor(np.ones(2)), cfg).data)
    assert math.isfinite(v) and v >= 2 * math.log(1e-7) - 1e-9
    with pytest.raises(NumericError):
        gen_adv_loss(Tensor(np.array([1.2])), cfg)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_all_losses_finite_for_any_probability(p_real, p_fake):
    cfg = StyleLossConfig()
    assert math.isfinite(float(gen_adv_loss(Tensor(np.array([p_fake])), cfg).data))
    assert math.isfinite(float(disc_adv_loss(Tensor(np.array([p_real])), Tensor(np.array([p_fake])), cfg).data))


def test_generator_objective_arithmetic():
    cfg = StyleLossConfig()
    total = generator_objective(Tensor(np.array(10.0)), Tensor(np.array(5.0)), Tensor(np.array(-0.7)), cfg)
    assert abs(float(total.data) + 0.68) < 1e-12
    assert float(discriminator_objective(Tensor(np.array(-1.2))).data) == -1.2


def test_generator_objective_gradient_is_linear():
    rng = np.random.default_rng(8)
    w = Tensor(rng.normal(size=(6,)), requires_grad=True)
    cfg = StyleLossConfig()

    def parts():
        lc = (w * w).sum()
        ls = (w * Tensor(rng_fixed)).sum()
        la = (w * 0.5).sum() * 0.1
        return lc, ls, la

    rng_fixed = rng.normal(size=(6,))
    g_total = backward(generator_objective(*parts(), cfg))[w]
    lc, ls, la = parts()
    g_c = backward(lc)[w]
    _, ls, _ = parts()
    g_s = backward(ls)[w]
    _, _, la = parts()
    g_a = backward(la)[w]
    assert np.allclose(g_total, cfg.lambda_c * g_c + cfg.lambda_s * g_s + g_a, atol=1e-12)


def test_zero_weight_limit():
    cfg = StyleLossConfig(lambda_c=1e-300, lambda_s=1e-300)
    total = generator_objective(Tensor(np.array(10.0)), Tensor(np.array(5.0)), Tensor(np.array(-0.7)), cfg)
    assert float(total.data) == -0.7
