"""Discrete Fourier transforms.

Naive O(N^2) transforms serve as ground-truth oracles.  The fast path is an
iterative radix-2 Cooley-Tukey kernel for power-of-two lengths and Bluestein's
chirp-z algorithm (built on the radix-2 kernel) for everything else.  All
transforms act along one axis and broadcast over the rest.

Conventions: forward transforms are unnormalized, inverses carry ``1/N``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import as_complex, as_real
from .errors import InvalidArgumentError


def half_width(w):
    """Number of retained columns of a real 2D spectrum of width ``w``."""
    return w // 2 + 1


def self_paired_columns(w):
    """Columns of the half-spectrum whose conjugate partner lies in the same column."""
    return (0, w // 2) if w % 2 == 0 else (0,)


def column_multiplicity(w):
    """How many full-spectrum columns each half-spectrum column stands for (1 or 2)."""
    mult = np.full(half_width(w), 2.0)
    mult[list(self_paired_columns(w))] = 1.0
    return mult


# -- naive oracles -----------------------------------------------------------

def _dft_matrix(n_len, sign):
    k = np.arange(n_len)
    # reduce kn mod N before the exponent to keep the phase exact
    return np.exp(sign * 2j * np.pi * (np.outer(k, k) % n_len) / n_len)


def dft_1d_naive(x):
    """Direct O(N^2) sum X[k] = sum_n x[n] exp(-2j pi k n / N) along the last axis."""
    x = as_complex(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise InvalidArgumentError("DFT needs at least one sample")
    return x @ _dft_matrix(x.shape[-1], -1).T


def idft_1d_naive(X):
    X = as_complex(X)
    if X.ndim == 0 or X.shape[-1] < 1:
        raise InvalidArgumentError("IDFT needs at least one sample")
    return X @ _dft_matrix(X.shape[-1], 1).T / X.shape[-1]


def dft_2d_naive(x):
    """Direct quadruple-loop 2D DFT of an ``M x N`` array."""
    x = as_complex(x)
    m_len, n_len = x.shape
    out = np.zeros((m_len, n_len), dtype=np.complex128)
    for u in range(m_len):
        for v in range(n_len):
            acc = 0j
            for m in range(m_len):
                for n in range(n_len):
                    phase = ((u * m) % m_len) / m_len + ((v * n) % n_len) / n_len
                    acc += x[m, n] * np.exp(-2j * np.pi * phase)
            out[u, v] = acc
    return out


# -- fast transforms ---------------------------------------------------------

@lru_cache(maxsize=None)
def _stage_twiddles(m):
    # exp(-j pi k / m), k < m: the twiddles merging two length-m halves
    return np.exp(-1j * np.pi * np.arange(m) / m)[:, None, None]


# complex elements per radix-2 work unit; keeps the stage temporaries inside L2
_BLOCK = 1 << 15


def _fft_pow2_unblocked(x):
    b, n_len, r = x.shape
    # axis 1: transforms of the current length; axis 2: interleaved subsequences
    X = x.reshape(b, 1, n_len, r)
    while X.shape[1] < n_len:
        half = X.shape[2] // 2
        even = X[:, :, :half]
        odd = X[:, :, half:] * _stage_twiddles(X.shape[1])
        X = np.concatenate([even + odd, even - odd], axis=1)
    return X.reshape(b, n_len, r)


def _fft_pow2(x):
    """Radix-2 decimation-in-time FFT along axis 1 of a ``(B, N, R)`` array, N = 2**k."""
    b, n_len, r = x.shape
    if x.size <= _BLOCK:
        return _fft_pow2_unblocked(x)
    out = np.empty(x.shape, dtype=np.complex128)
    if b > 1:
        step = max(1, _BLOCK // (n_len * r))
        for i in range(0, b, step):
            out[i:i + step] = _fft_pow2_unblocked(x[i:i + step])
    else:
        step = max(1, _BLOCK // n_len)
        for j in range(0, r, step):
            out[:, :, j:j + step] = _fft_pow2_unblocked(x[:, :, j:j + step])
    return out


@lru_cache(maxsize=None)
def _bluestein_tables(n_len):
    k = np.arange(n_len)
    # k^2 mod 2N keeps the chirp phase accurate for large N
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n_len)) / n_len)
    m_len = 1 << (2 * n_len - 2).bit_length()
    b = np.zeros(m_len, dtype=np.complex128)
    b[:n_len] = np.conj(chirp)
    b[m_len - n_len + 1:] = np.conj(chirp[1:][::-1])
    return chirp[:, None], m_len, _fft_pow2(b.reshape(1, m_len, 1))[0]


def _fft_bluestein(x):
    b, n_len, r = x.shape
    chirp, m_len, b_hat = _bluestein_tables(n_len)
    a = np.zeros((b, m_len, r), dtype=np.complex128)
    a[:, :n_len] = x * chirp
    conv = _ifft_pow2(_fft_pow2(a) * b_hat)
    return conv[:, :n_len] * chirp


def _ifft_pow2(X):
    return np.conj(_fft_pow2(np.conj(X))) / X.shape[1]


def _fft_kernel(x):
    n_len = x.shape[1]
    if n_len < 1:
        raise InvalidArgumentError("FFT needs at least one sample")
    if n_len & (n_len - 1) == 0:
        return _fft_pow2(x)
    return _fft_bluestein(x)


def _along(x, axis, kernel):
    # view as (before, n, after) so the trailing axes stay contiguous
    axis = axis % x.ndim
    shape = x.shape
    b = int(np.prod(shape[:axis], dtype=np.int64))
    r = int(np.prod(shape[axis + 1:], dtype=np.int64))
    return kernel(x.reshape(b, shape[axis], r)).reshape(shape)


def fft(x, axis=-1):
    """Unnormalized DFT along ``axis`` for any length."""
    return _along(as_complex(x), axis, _fft_kernel)


def ifft(X, axis=-1):
    """Inverse DFT along ``axis`` (carries the ``1/N`` factor)."""
    X = as_complex(X)
    return np.conj(_along(np.conj(X), axis, _fft_kernel)) / X.shape[axis]


def fft_1d(x):
    """DFT along the last axis."""
    return fft(x, axis=-1)


def ifft_1d(X):
    return ifft(X, axis=-1)


def fft_2d(x, axes=(0, 1)):
    """2D DFT as two passes of 1D transforms."""
    return fft(fft(x, axis=axes[1]), axis=axes[0])


def ifft_2d(X, axes=(0, 1)):
    return ifft(ifft(X, axis=axes[1]), axis=axes[0])


# -- real-input half spectra -------------------------------------------------

@dataclass
class SpectrumHalf:
    """Columns ``0 .. W//2`` of the 2D spectrum of a real ``(..., H, W, D)`` tensor."""

    values: np.ndarray
    full_width: int

    @property
    def height(self):
        return self.values.shape[-3]

    @property
    def half_width(self):
        return self.values.shape[-2]

    def __post_init__(self):
        self.values = as_complex(self.values)
        if self.values.ndim < 3:
            raise InvalidArgumentError("half spectrum needs (..., H, W_half, D) values")
        if self.values.shape[-2] != half_width(self.full_width):
            raise InvalidArgumentError(
                f"half width {self.values.shape[-2]} inconsistent with full width {self.full_width}"
            )


def rfft_2d(x):
    """2D DFT over the spatial axes of a real ``(..., H, W, D)`` tensor, half width."""
    x = as_real(x)
    if x.ndim < 3:
        raise InvalidArgumentError(f"expected (..., H, W, D), got shape {x.shape}")
    w = x.shape[-2]
    # the width pass runs on the full row; only retained columns get the height pass
    rows = fft(x, axis=-2)[..., : half_width(w), :]
    return SpectrumHalf(fft(rows, axis=-3), w)


def symmetrize_half(values, full_width):
    """Project the self-paired columns onto their conjugate-symmetric part."""
    values = as_complex(values).copy()
    h = values.shape[-3]
    flip = (-np.arange(h)) % h
    for col in self_paired_columns(full_width):
        c = values[..., :, col, :]
        values[..., :, col, :] = 0.5 * (c + np.conj(c[..., flip, :]))
    return values


def expand_half(values, full_width):
    """Rebuild the full conjugate-symmetric spectrum from a (symmetrized) half."""
    values = as_complex(values)
    h = values.shape[-3]
    wh = values.shape[-2]
    flip = (-np.arange(h)) % h
    tail_cols = np.arange(wh, full_width)
    tail = np.conj(values[..., flip, :, :][..., :, full_width - tail_cols, :])
    return np.concatenate([values, tail], axis=-2)


def irfft_2d(X, residue_tol=1e-9):
    """Inverse of :func:`rfft_2d`; always returns a real tensor."""
    if not isinstance(X, SpectrumHalf):
        raise InvalidArgumentError("irfft_2d expects a SpectrumHalf carrying its full width")
    w = X.full_width
    # height pass on the half only; each row is then conjugate-symmetric along width
    rows = ifft(symmetrize_half(X.values, w), axis=-3)
    tail = np.conj(rows[..., :, w - np.arange(X.half_width, w), :])
    y = ifft(np.concatenate([rows, tail], axis=-2), axis=-2)
    scale = max(1.0, float(np.max(np.abs(y.real), initial=0.0)))
    residue = float(np.max(np.abs(y.imag), initial=0.0))
    if residue > residue_tol * scale:
        raise ArithmeticError(f"inverse real transform left imaginary residue {residue:.3e}")
    return np.ascontiguousarray(y.real)
