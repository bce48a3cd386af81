"""Global filter layer: learnable frequency-domain token mixing.

The layer computes ``y = irfft_2d(K ⊙ rfft_2d(x))`` with a complex filter ``K``
stored on the half spectrum.  Each complex bin is two independent real
parameters, so gradients come back as a complex array whose real and imaginary
parts are the two real partial derivatives.
"""

from dataclasses import dataclass

import numpy as np

from .core import as_complex, as_real
from .errors import InvalidArgumentError, InvalidStateError
from .fourier import (
    SpectrumHalf,
    column_multiplicity,
    fft,
    half_width,
    irfft_2d,
    rfft_2d,
)

INIT_STD = 0.02


@dataclass
class GlobalFilter:
    """Half-spectrum filter ``K_r`` of shape ``(H, W//2 + 1, D)`` for an ``H x W`` grid."""

    height: int
    width: int
    weight: np.ndarray

    def __post_init__(self):
        self.weight = as_complex(self.weight)
        expected = (self.height, half_width(self.width))
        if self.weight.ndim != 3 or self.weight.shape[:2] != expected:
            raise InvalidArgumentError(
                f"filter shape {self.weight.shape} does not match grid {self.height}x{self.width}"
            )

    @property
    def channels(self):
        return self.weight.shape[2]

    @property
    def num_params(self):
        return 2 * self.weight.size

    @classmethod
    def init(cls, height, width, channels, rng, std=INIT_STD):
        shape = (height, half_width(width), channels)
        w = rng.normal(0.0, std, shape) + 1j * rng.normal(0.0, std, shape)
        return cls(height, width, w)

    @classmethod
    def constant(cls, height, width, channels, value=1.0):
        w = np.full((height, half_width(width), channels), value, dtype=np.complex128)
        return cls(height, width, w)

    @classmethod
    def from_real(cls, height, width, packed):
        """Build from a real ``(H, W_half, D, 2)`` array holding re/im planes."""
        packed = as_real(packed)
        return cls(height, width, packed[..., 0] + 1j * packed[..., 1])

    def to_real(self):
        return np.stack([self.weight.real, self.weight.imag], axis=-1)


@dataclass
class FilterCache:
    spectrum: np.ndarray
    weight: np.ndarray
    width: int


def _check_input(x, f):
    if x.ndim < 3 or x.shape[-3:] != (f.height, f.width, f.channels):
        raise InvalidArgumentError(
            f"input {x.shape} does not match filter grid {(f.height, f.width, f.channels)}"
        )


def global_filter_forward(x, f):
    x = as_real(x)
    _check_input(x, f)
    X = rfft_2d(x)
    y = irfft_2d(SpectrumHalf(X.values * f.weight, f.width))
    # the weight is copied so an optimizer step between forward and backward is detectable
    return y, FilterCache(X.values, f.weight.copy(), f.width)


def _irfft_adjoint(dy):
    """Adjoint of irfft_2d (with its symmetrizing projection) w.r.t. the real inner product."""
    h, w = dy.shape[-3], dy.shape[-2]
    P = rfft_2d(dy).values / (h * w)
    return P * column_multiplicity(w)[:, None]


def _rfft_adjoint(dX, width):
    """Adjoint of rfft_2d: embed into the full grid, then a conjugated forward FFT."""
    lead = dX.shape[:-2]
    full = np.zeros(lead + (width, dX.shape[-1]), dtype=np.complex128)
    full[..., : dX.shape[-2], :] = dX
    return np.ascontiguousarray(fft(fft(np.conj(full), axis=-2), axis=-3).real)


def global_filter_backward(dy, cache, f):
    """Return ``(dx, dK)`` for upstream gradient ``dy``.

    ``dK`` has the filter's shape; it is summed over any leading batch axes.
    """
    if cache is None or not isinstance(cache, FilterCache):
        raise InvalidStateError("global_filter_backward needs the cache from forward")
    if cache.width != f.width or cache.weight.shape != f.weight.shape or not np.array_equal(
        cache.weight, f.weight
    ):
        raise InvalidStateError("forward cache is stale: filter changed since forward")
    dy = as_real(dy)
    spec = cache.spectrum.shape
    if dy.shape[:-2] != spec[:-2] or dy.shape[-2:] != (f.width, spec[-1]):
        raise InvalidStateError(f"gradient shape {dy.shape} does not match forward cache")
    dZ = _irfft_adjoint(dy)
    dK = dZ * np.conj(cache.spectrum)
    if dK.ndim > 3:
        dK = dK.reshape((-1,) + dK.shape[-3:]).sum(axis=0)
    dX = dZ * np.conj(f.weight)
    dx = _rfft_adjoint(dX, f.width)
    return dx, dK


def circular_conv_oracle(x, h):
    """Depthwise circular convolution by explicit loops over all filter taps.

    ``y[m, n, d] = sum_{p, q} h[p, q, d] * x[(m - p) mod H, (n - q) mod W, d]``.
    """
    x = as_real(x)
    h = as_real(h)
    if x.shape != h.shape or x.ndim != 3:
        raise InvalidArgumentError(f"oracle needs equal (H, W, D) shapes, got {x.shape}, {h.shape}")
    H, W, D = x.shape
    y = np.zeros_like(x)
    for m in range(H):
        for n in range(W):
            for p in range(H):
                for q in range(W):
                    y[m, n, :] += h[p, q, :] * x[(m - p) % H, (n - q) % W, :]
    return y


def spatial_filter_of(f):
    """Real spatial kernel whose circular convolution reproduces the layer."""
    return irfft_2d(SpectrumHalf(f.weight, f.width))


def _cubic_weights(t):
    # Keys cubic convolution kernel, a = -0.5, taps at offsets -1, 0, 1, 2
    a = -0.5
    d = np.stack([1 + t, t, 1 - t, 2 - t])
    w = np.where(
        d <= 1,
        (a + 2) * d**3 - (a + 3) * d**2 + 1,
        a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a,
    )
    return w, np.array([-1, 0, 1, 2])


def _resample(values, axis, new_len, old_period, new_period, wrap, method):
    """Resample samples at ``2 pi k / old_period`` onto ``2 pi k / new_period``.

    ``wrap`` treats the axis as periodic; otherwise out-of-range taps are
    clamped to the edge samples.
    """
    old_len = values.shape[axis]
    vals = np.moveaxis(values, axis, 0)
    k = np.arange(new_len)
    base = (k * old_period) // new_period
    # exact fractional offset: zero whenever the target hits a source sample
    t = (k * old_period - base * new_period) / new_period
    if method == "linear":
        weights = np.stack([1 - t, t])
        offsets = np.array([0, 1])
    elif method == "cubic":
        weights, offsets = _cubic_weights(t)
    else:
        raise InvalidArgumentError(f"unknown interpolation method {method!r}")
    out = np.zeros((new_len,) + vals.shape[1:], dtype=vals.dtype)
    tail = (slice(None),) + (None,) * (vals.ndim - 1)
    for w_tap, off in zip(weights, offsets):
        idx = base + off
        idx = idx % old_len if wrap else np.clip(idx, 0, old_len - 1)
        out += w_tap[tail] * vals[idx]
    return np.moveaxis(out, 0, axis)


def interpolate_filter(f, new_height, new_width, method="cubic"):
    """Resample a filter to a new token grid.

    Bin ``(u, v)`` samples a continuous spectrum at ``(2 pi u / H, 2 pi v / W)``.
    The half spectrum is resampled at the new grid's frequencies, periodically
    along the height axis and with edge clamping along the width axis.
    """
    if new_height < 1 or new_width < 1:
        raise InvalidArgumentError("target grid must be at least 1x1")
    if (new_height, new_width) == (f.height, f.width):
        return GlobalFilter(f.height, f.width, f.weight.copy())
    w = _resample(f.weight, 0, new_height, f.height, new_height, True, method)
    w = _resample(w, 1, half_width(new_width), f.width, new_width, False, method)
    return GlobalFilter(new_height, new_width, w)
