import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfnet.errors import InvalidArgumentError, InvalidStateError
from gfnet.fourier import fft_2d, half_width, irfft_2d, rfft_2d, symmetrize_half
from gfnet.gfilter import (
    GlobalFilter,
    circular_conv_oracle,
    global_filter_backward,
    global_filter_forward,
    interpolate_filter,
    spatial_filter_of,
)
from gfnet.train import gradcheck

SHAPES = [(4, 4), (5, 7), (8, 8), (14, 14)]


def random_filter(rng, h, w, d, scale=1.0):
    return GlobalFilter.init(h, w, d, rng, std=scale)


def test_identity_filter_passes_input(rng):
    x = rng.standard_normal((6, 9, 3))
    y, _ = global_filter_forward(x, GlobalFilter.constant(6, 9, 3, 1.0))
    assert np.abs(y - x).max() < 1e-11


def test_zero_filter_gives_zero(rng):
    y, _ = global_filter_forward(rng.standard_normal((5, 4, 2)), GlobalFilter.constant(5, 4, 2, 0.0))
    assert np.all(y == 0)


def test_matches_circular_conv_8x8(rng):
    x = rng.standard_normal((8, 8, 2))
    f = random_filter(rng, 8, 8, 2)
    y, _ = global_filter_forward(x, f)
    assert np.abs(y - circular_conv_oracle(x, spatial_filter_of(f))).max() < 1e-9


@pytest.mark.parametrize("h,w", SHAPES)
@pytest.mark.parametrize("d", [1, 3])
def test_oracle_equivalence_all_shapes(rng, h, w, d):
    for _ in range(3):
        x = rng.standard_normal((h, w, d))
        f = random_filter(rng, h, w, d)
        y, _ = global_filter_forward(x, f)
        assert np.isrealobj(y)
        assert np.abs(y - circular_conv_oracle(x, spatial_filter_of(f))).max() < 1e-9


def test_batched_forward_matches_per_sample(rng):
    x = rng.standard_normal((3, 6, 5, 2))
    f = random_filter(rng, 6, 5, 2)
    y, _ = global_filter_forward(x, f)
    for i in range(3):
        assert np.array_equal(y[i], global_filter_forward(x[i], f)[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**32 - 1))
def test_linearity_in_x(h, w, a, b, seed):
    g = np.random.default_rng(seed)
    f = random_filter(g, h, w, 2)
    x1, x2 = g.standard_normal((h, w, 2)), g.standard_normal((h, w, 2))
    lhs = global_filter_forward(a * x1 + b * x2, f)[0]
    rhs = a * global_filter_forward(x1, f)[0] + b * global_filter_forward(x2, f)[0]
    assert np.abs(lhs - rhs).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_output_is_real_for_any_filter(h, w, seed):
    g = np.random.default_rng(seed)
    f = random_filter(g, h, w, 2, scale=3.0)
    y, _ = global_filter_forward(g.standard_normal((h, w, 2)), f)
    assert y.dtype == np.float64 and y.shape == (h, w, 2) and np.all(np.isfinite(y))


def test_param_count_halving():
    f = GlobalFilter.constant(14, 14, 384)
    assert f.num_params == 2 * 14 * 8 * 384 == 86_016
    assert f.to_real().size == 86_016


def test_filter_shape_validated():
    with pytest.raises(InvalidArgumentError):
        GlobalFilter(4, 4, np.zeros((4, 4, 1), complex))


def test_input_shape_validated(rng):
    with pytest.raises(InvalidArgumentError):
        global_filter_forward(rng.standard_normal((4, 5, 2)), GlobalFilter.constant(4, 4, 2))


def test_backward_zero_and_identity(rng):
    f = random_filter(rng, 5, 6, 2)
    x = rng.standard_normal((5, 6, 2))
    _, cache = global_filter_forward(x, f)
    dx, dK = global_filter_backward(np.zeros_like(x), cache, f)
    assert np.all(dx == 0) and np.all(dK == 0)
    one = GlobalFilter.constant(5, 6, 2, 1.0)
    _, cache = global_filter_forward(x, one)
    dy = rng.standard_normal(x.shape)
    dx, _ = global_filter_backward(dy, cache, one)
    assert np.abs(dx - dy).max() < 1e-12


@pytest.mark.parametrize("h,w", [(6, 6), (5, 7), (4, 3)])
def test_backward_matches_finite_differences(rng, h, w):
    x0 = rng.standard_normal((h, w, 2))
    f0 = random_filter(rng, h, w, 2)
    r = rng.standard_normal((h, w, 2))

    def fn(p):
        f = GlobalFilter.from_real(h, w, p["filter"])
        y, cache = global_filter_forward(p["x"], f)
        dx, dK = global_filter_backward(r, cache, f)
        return float((y * r).sum()), {"x": dx, "filter": np.stack([dK.real, dK.imag], -1)}

    rep = gradcheck(fn, {"x": x0, "filter": f0.to_real()})
    assert rep.passed(1e-6), rep.per_tensor


def test_backward_batch_sums_filter_grad(rng):
    f = random_filter(rng, 4, 5, 2)
    x = rng.standard_normal((3, 4, 5, 2))
    dy = rng.standard_normal(x.shape)
    _, cache = global_filter_forward(x, f)
    dx, dK = global_filter_backward(dy, cache, f)
    total = np.zeros_like(dK)
    for i in range(3):
        _, c = global_filter_forward(x[i], f)
        dxi, dKi = global_filter_backward(dy[i], c, f)
        assert np.abs(dxi - dx[i]).max() < 1e-13
        total += dKi
    assert np.abs(total - dK).max() < 1e-12


def test_backward_rejects_missing_or_stale_cache(rng):
    f = random_filter(rng, 4, 4, 1)
    x = rng.standard_normal((4, 4, 1))
    with pytest.raises(InvalidStateError):
        global_filter_backward(x, None, f)
    _, cache = global_filter_forward(x, f)
    f.weight[0, 0, 0] += 1.0
    with pytest.raises(InvalidStateError):
        global_filter_backward(x, cache, f)


def test_backward_rejects_wrong_gradient_shape(rng):
    f = random_filter(rng, 4, 4, 1)
    _, cache = global_filter_forward(rng.standard_normal((4, 4, 1)), f)
    with pytest.raises(InvalidStateError):
        global_filter_backward(np.zeros((4, 5, 1)), cache, f)


def test_oracle_impulses(rng):
    x = rng.standard_normal((5, 4, 3))
    h = np.zeros_like(x)
    h[0, 0] = 1
    assert np.allclose(circular_conv_oracle(x, h), x, atol=1e-15)
    h = np.zeros_like(x)
    h[1, 0] = 1
    assert np.allclose(circular_conv_oracle(x, h), np.roll(x, 1, axis=0), atol=1e-15)


def test_oracle_convolution_theorem(rng):
    x, h = rng.standard_normal((5, 7, 3)), rng.standard_normal((5, 7, 3))
    y = circular_conv_oracle(x, h)
    for d in range(3):
        assert np.abs(fft_2d(y[..., d]) - fft_2d(x[..., d]) * fft_2d(h[..., d])).max() < 1e-9


def test_spatial_filter_examples():
    k = spatial_filter_of(GlobalFilter.constant(4, 6, 2, 1.0))
    expected = np.zeros((4, 6, 2))
    expected[0, 0] = 1
    assert np.abs(k - expected).max() < 1e-14
    f = GlobalFilter.constant(4, 6, 2, 0.0)
    f.weight[0, 0] = 24
    assert np.abs(spatial_filter_of(f) - 1).max() < 1e-13


@pytest.mark.parametrize("h,w", [(6, 8), (5, 7), (4, 4)])
def test_spatial_filter_round_trip(rng, h, w):
    f = random_filter(rng, h, w, 3)
    back = rfft_2d(spatial_filter_of(f)).values
    assert np.abs(back - symmetrize_half(f.weight, w)).max() < 1e-10


def test_interpolate_identity_is_exact(rng):
    f = random_filter(rng, 7, 9, 2)
    g = interpolate_filter(f, 7, 9)
    assert np.array_equal(g.weight, f.weight) and g.weight is not f.weight


@pytest.mark.parametrize("method", ["cubic", "linear"])
@pytest.mark.parametrize("target", [(12, 12), (16, 10), (5, 5), (3, 9)])
def test_interpolate_preserves_constants(method, target):
    c = 0.7 - 0.3j
    g = interpolate_filter(GlobalFilter.constant(8, 8, 2, c), *target, method=method)
    assert g.weight.shape == (target[0], half_width(target[1]), 2)
    assert np.abs(g.weight - c).max() < 1e-13


def _cos_u_filter(n):
    u = np.arange(n)
    w = np.cos(2 * np.pi * u / n)[:, None, None] * np.ones((1, half_width(n), 1))
    return GlobalFilter(n, n, w.astype(complex))


def test_interpolate_smooth_spectrum():
    g = interpolate_filter(_cos_u_filter(8), 16, 16)
    assert np.abs(g.weight - _cos_u_filter(16).weight).max() < 2e-2


def test_linear_interpolation_error_on_smooth_spectrum():
    # a midpoint estimate of cos is cos(mid) * cos(pi/8); the worst midpoint has |cos(mid)| = cos(pi/8)
    g = interpolate_filter(_cos_u_filter(8), 16, 16, method="linear")
    err = np.abs(g.weight - _cos_u_filter(16).weight).max()
    assert err == pytest.approx((1 - np.cos(np.pi / 8)) * np.cos(np.pi / 8), abs=1e-12)
    assert err > 2e-2


def test_interpolated_filter_gives_real_output(rng):
    g = interpolate_filter(random_filter(rng, 8, 8, 3), 12, 12)
    y, _ = global_filter_forward(rng.standard_normal((12, 12, 3)), g)
    assert np.all(np.isfinite(y)) and y.shape == (12, 12, 3)


def test_interpolate_rejects_bad_method_and_size(rng):
    f = random_filter(rng, 4, 4, 1)
    with pytest.raises(InvalidArgumentError):
        interpolate_filter(f, 8, 8, method="sinc")
    with pytest.raises(InvalidArgumentError):
        interpolate_filter(f, 0, 8)


def test_init_statistics(rng):
    f = GlobalFilter.init(14, 14, 384, rng)
    assert f.weight.real.std() == pytest.approx(0.02, rel=0.05)
    assert f.weight.imag.std() == pytest.approx(0.02, rel=0.05)
