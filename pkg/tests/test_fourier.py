import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfnet.errors import InvalidArgumentError
from gfnet.fourier import (
    SpectrumHalf,
    dft_1d_naive,
    dft_2d_naive,
    expand_half,
    fft,
    fft_1d,
    fft_2d,
    half_width,
    idft_1d_naive,
    ifft_1d,
    ifft_2d,
    irfft_2d,
    rfft_2d,
    symmetrize_half,
)

from conftest import crandn


def circconv_1d(x, h):
    n = len(x)
    return np.array([sum(x[m] * h[(k - m) % n] for m in range(n)) for k in range(n)])


def circconv_2d(x, h):
    H, W = x.shape
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            for a in range(H):
                for b in range(W):
                    out[i, j] += x[a, b] * h[(i - a) % H, (j - b) % W]
    return out


def test_naive_dft_hand_examples():
    assert np.allclose(dft_1d_naive([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)
    assert np.allclose(dft_1d_naive([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)
    assert np.allclose(dft_1d_naive([1, 2, 3, 4]), [10, -2 + 2j, -2, -2 - 2j], atol=1e-14)


def test_naive_idft(rng):
    assert np.allclose(idft_1d_naive([4, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)
    assert np.allclose(idft_1d_naive([1, 1, 1, 1]), [1, 0, 0, 0], atol=1e-15)
    x = rng.standard_normal(7)
    assert np.abs(idft_1d_naive(dft_1d_naive(x)) - x).max() < 1e-12


def test_fft_hand_example():
    assert np.allclose(fft_1d(np.array([1.0, 2, 3, 4])), [10, -2 + 2j, -2, -2 - 2j], atol=1e-14)


@pytest.mark.parametrize("n,tol", [(8, 1e-12), (14, 1e-10), (56, 1e-10), (1, 0.0)])
def test_fft_matches_naive(rng, n, tol):
    x = crandn(rng, n)
    assert np.abs(fft_1d(x) - dft_1d_naive(x)).max() <= tol


def test_fft_length_one_is_identity():
    assert fft_1d(np.array([2.5 - 1j]))[0] == 2.5 - 1j


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 12, 16, 31, 64, 100, 128, 243])
def test_ifft_round_trip(rng, n):
    x = crandn(rng, 3, n)
    assert np.abs(ifft_1d(fft_1d(x)) - x).max() < 1e-12


def test_fft_batched_axis_matches_per_row(rng):
    x = crandn(rng, 4, 10, 3)
    got = fft(x, axis=1)
    for i in range(4):
        for j in range(3):
            assert np.abs(got[i, :, j] - dft_1d_naive(x[i, :, j])).max() < 1e-12


def test_fft_cross_check_against_numpy(rng):
    for n in (6, 17, 1024, 1000):
        x = crandn(rng, n)
        assert np.abs(fft_1d(x) - np.fft.fft(x)).max() < 1e-9


def test_fft_2d_impulse_and_separable(rng):
    x = np.zeros((4, 6))
    x[0, 0] = 1
    assert np.allclose(fft_2d(x), 1, atol=1e-15)
    f, g = rng.standard_normal(5), rng.standard_normal(7)
    X = fft_2d(np.outer(f, g))
    assert np.abs(X - np.outer(fft_1d(f), fft_1d(g))).max() < 1e-11


def test_fft_2d_matches_double_sum(rng):
    x = rng.standard_normal((6, 10))
    assert np.abs(fft_2d(x) - dft_2d_naive(x)).max() < 1e-10
    assert np.abs(ifft_2d(fft_2d(x)) - x).max() < 1e-12


def test_rfft_constant_has_only_dc():
    X = rfft_2d(np.full((4, 4, 1), 2.5))
    assert X.values.shape == (4, 3, 1)
    assert X.values[0, 0, 0] == pytest.approx(16 * 2.5)
    rest = X.values.copy()
    rest[0, 0, 0] = 0
    assert np.abs(rest).max() < 1e-13


def test_rfft_matches_full_fft(rng):
    x = rng.standard_normal((8, 8, 3))
    X = rfft_2d(x)
    for d in range(3):
        assert np.abs(X.values[:, :, d] - fft_2d(x[:, :, d])[:, :5]).max() < 1e-10


@pytest.mark.parametrize("w,expected", [(14, 8), (7, 4), (1, 1), (2, 2), (56, 29)])
def test_half_width(w, expected):
    assert half_width(w) == expected


def test_irfft_round_trip(rng):
    x = rng.standard_normal((14, 14, 4))
    assert np.abs(irfft_2d(rfft_2d(x)) - x).max() < 1e-10


def test_irfft_dc_only():
    v = np.zeros((5, 4, 2), complex)
    v[0, 0] = 5 * 6
    assert np.abs(irfft_2d(SpectrumHalf(v, 6)) - 1).max() < 1e-13


@pytest.mark.parametrize("h,w", [(6, 8), (5, 7), (4, 5), (3, 2)])
def test_irfft_matches_full_inverse_of_symmetrized(rng, h, w):
    raw = crandn(rng, h, half_width(w), 2)
    sym = symmetrize_half(raw, w)
    full = expand_half(sym, w)
    ref = np.stack([ifft_2d(full[:, :, d]) for d in range(2)], axis=-1)
    assert np.abs(ref.imag).max() < 1e-12
    assert np.abs(irfft_2d(SpectrumHalf(raw, w)) - ref.real).max() < 1e-12


def test_spectrum_half_rejects_bad_width():
    with pytest.raises(InvalidArgumentError):
        SpectrumHalf(np.zeros((4, 4, 1), complex), 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_conjugate_symmetry_2d(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((h, w))
    X = fft_2d(x)
    u, v = np.arange(h)[:, None], np.arange(w)[None, :]
    assert np.abs(X[(-u) % h, (-v) % w] - np.conj(X)).max() < 1e-11


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_conjugate_symmetry_1d_and_parseval(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    X = fft_1d(x)
    k = np.arange(n)
    assert np.abs(X[(-k) % n] - np.conj(X)).max() < 1e-11
    assert abs((x**2).sum() - (np.abs(X) ** 2).sum() / n) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_parseval_2d(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((h, w))
    assert abs((x**2).sum() - (np.abs(fft_2d(x)) ** 2).sum() / (h * w)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_linearity(n, a, b, seed):
    g = np.random.default_rng(seed)
    x, y = g.standard_normal(n), g.standard_normal(n)
    assert np.abs(fft_1d(a * x + b * y) - (a * fft_1d(x) + b * fft_1d(y))).max() < 1e-11


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_convolution_theorem_1d(n, seed):
    g = np.random.default_rng(seed)
    x, h = g.standard_normal(n), g.standard_normal(n)
    assert np.abs(fft_1d(circconv_1d(x, h)) - fft_1d(x) * fft_1d(h)).max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_convolution_theorem_2d(hh, ww, seed):
    g = np.random.default_rng(seed)
    x, h = g.standard_normal((hh, ww)), g.standard_normal((hh, ww))
    assert np.abs(fft_2d(circconv_2d(x, h)) - fft_2d(x) * fft_2d(h)).max() < 1e-9


def test_fft_runtime_is_n_log_n(rng):
    consts = []
    for p in (10, 12, 14):
        n = 1 << p
        x = crandn(rng, 8, n)
        fft_1d(x)
        ts = []
        for _ in range(7):
            t0 = time.perf_counter()
            fft_1d(x)
            ts.append(time.perf_counter() - t0)
        consts.append(np.median(ts) / (n * p))
    assert max(consts) / min(consts) < 3.0, consts


def test_naive_dft_matches_scalar_loop(rng):
    # the oracle's matrix form against a literal double loop
    for n in (1, 5, 12):
        x = crandn(rng, n)
        ref = [sum(x[m] * np.exp(-2j * np.pi * k * m / n) for m in range(n)) for k in range(n)]
        assert np.abs(dft_1d_naive(x) - np.array(ref)).max() < 1e-12
