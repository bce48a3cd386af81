"""Dense tensor primitives shared by every layer.

Real tensors are float64 ndarrays and complex tensors are complex128 ndarrays.
Token tensors use an ``(..., H, W, D)`` layout with channels innermost, so
leading batch axes pass through every operation unchanged.
"""

import math

import numpy as np

from .errors import InvalidArgumentError

GELU_COEF = math.sqrt(2.0 / math.pi)


def as_real(x):
    return np.asarray(x, dtype=np.float64)


def as_complex(x):
    return np.asarray(x, dtype=np.complex128)


def elementwise_mul_complex(a, b):
    """Hadamard product of two complex tensors of identical shape."""
    a = as_complex(a)
    b = as_complex(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def matmul(a, b):
    """Matrix product over the last two axes; leading axes of ``a`` are batch axes."""
    a = as_real(a)
    b = as_real(b)
    if b.ndim != 2 or a.ndim < 1:
        raise InvalidArgumentError(f"matmul expects (..., K) @ (K, N), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise InvalidArgumentError(f"inner dims disagree: {a.shape} @ {b.shape}")
    return a @ b


def gelu_tanh(x):
    return np.tanh(GELU_COEF * x * (1.0 + 0.044715 * x * x))


def gelu(x, tanh_out=None):
    """GELU, tanh approximation; ``tanh_out`` may carry a precomputed inner tanh."""
    x = as_real(x)
    t = gelu_tanh(x) if tanh_out is None else tanh_out
    return 0.5 * x * (1.0 + t)


def gelu_grad(x, tanh_out=None):
    """Derivative of :func:`gelu` with respect to its input."""
    x = as_real(x)
    t = gelu_tanh(x) if tanh_out is None else tanh_out
    dinner = GELU_COEF * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner


def softmax_lastdim(x):
    x = as_real(x)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_lastdim(x):
    x = as_real(x)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def layer_norm_stats(x, axis=-1):
    """Mean and (biased) variance along ``axis``, keeping dims for broadcasting."""
    x = as_real(x)
    mean = x.mean(axis=axis, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=axis, keepdims=True)
    return mean, var
