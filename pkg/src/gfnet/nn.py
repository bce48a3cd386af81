"""Non-spectral layers of a GFNet block, each with an explicit backward pass.

Parameters live in flat ``name -> float64 array`` dicts so that optimizers and
checkpoints treat every tensor the same way.  Layer dataclasses are thin views
over those arrays; backward functions return gradients keyed like the params.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import gelu_tanh, as_real, gelu, gelu_grad, layer_norm_stats
from .errors import InvalidArgumentError
from .gfilter import GlobalFilter, global_filter_backward, global_filter_forward

LN_EPS = 1e-6
LAYERSCALE_INIT = 1e-5
RESIDUAL_STYLES = ("two_residuals", "single_residual")


def _flat_rows(a):
    return a.reshape(-1, a.shape[-1])


# -- layer norm --------------------------------------------------------------

@dataclass
class LayerNorm:
    scale: np.ndarray
    shift: np.ndarray

    @classmethod
    def init(cls, dim):
        return cls(np.ones(dim), np.zeros(dim))


def layer_norm_forward(x, ln):
    x = as_real(x)
    mean, var = layer_norm_stats(x, axis=-1)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv_std
    return xhat * ln.scale + ln.shift, (xhat, inv_std)


def layer_norm_backward(dy, cache, ln):
    xhat, inv_std = cache
    dxhat = dy * ln.scale
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    grads = {
        "scale": _flat_rows(dy * xhat).sum(axis=0),
        "shift": _flat_rows(dy).sum(axis=0),
    }
    return dx, grads


# -- patch embedding ---------------------------------------------------------

@dataclass
class PatchEmbed:
    """Non-overlapping ``patch_h x patch_w`` flatten-and-project.

    ``weight`` rows are ordered (row in patch, column in patch, channel).
    """

    patch_h: int
    patch_w: int
    in_channels: int
    weight: np.ndarray
    bias: np.ndarray

    @property
    def dim(self):
        return self.weight.shape[1]

    @classmethod
    def init(cls, patch, in_channels, dim, rng):
        fan_in = patch * patch * in_channels
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, dim))
        return cls(patch, patch, in_channels, w, np.zeros(dim))


def _patchify(img, ph, pw):
    *lead, hi, wi, c = img.shape
    if hi % ph or wi % pw:
        raise InvalidArgumentError(f"image {hi}x{wi} not divisible into {ph}x{pw} patches")
    h, w = hi // ph, wi // pw
    p = img.reshape(*lead, h, ph, w, pw, c)
    p = np.moveaxis(p, -4, -3)  # (..., h, w, ph, pw, c)
    return p.reshape(*lead, h, w, ph * pw * c)


def _unpatchify(patches, ph, pw, c):
    *lead, h, w, _ = patches.shape
    p = patches.reshape(*lead, h, w, ph, pw, c)
    p = np.moveaxis(p, -3, -4)
    return p.reshape(*lead, h * ph, w * pw, c)


def patch_embed_forward(img, p):
    img = as_real(img)
    if img.ndim < 3 or img.shape[-1] != p.in_channels:
        raise InvalidArgumentError(f"image shape {img.shape} needs {p.in_channels} channels")
    return _patchify(img, p.patch_h, p.patch_w) @ p.weight + p.bias


def patch_embed_backward(dy, img, p):
    patches = _patchify(as_real(img), p.patch_h, p.patch_w)
    grads = {
        "weight": _flat_rows(patches).T @ _flat_rows(dy),
        "bias": _flat_rows(dy).sum(axis=0),
    }
    dimg = _unpatchify(dy @ p.weight.T, p.patch_h, p.patch_w, p.in_channels)
    return dimg, grads


# -- feedforward -------------------------------------------------------------

@dataclass
class Ffn:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, dim, rng, std=0.02):
        hidden = 4 * dim
        return cls(
            rng.normal(0.0, std, (dim, hidden)),
            np.zeros(hidden),
            rng.normal(0.0, std, (hidden, dim)),
            np.zeros(dim),
        )


def ffn_forward(x, ffn):
    h = x @ ffn.w1 + ffn.b1
    t = gelu_tanh(h)
    a = gelu(h, t)
    return a @ ffn.w2 + ffn.b2, (x, h, t, a)


def ffn_backward(dy, cache, ffn):
    x, h, t, a = cache
    da = dy @ ffn.w2.T
    dh = da * gelu_grad(h, t)
    grads = {
        "w1": _flat_rows(x).T @ _flat_rows(dh),
        "b1": _flat_rows(dh).sum(axis=0),
        "w2": _flat_rows(a).T @ _flat_rows(dy),
        "b2": _flat_rows(dy).sum(axis=0),
    }
    return dh @ ffn.w1.T, grads


# -- block -------------------------------------------------------------------

@dataclass
class BlockParams:
    norm1: LayerNorm
    filter: GlobalFilter
    norm2: LayerNorm
    ffn: Ffn
    gamma1: Optional[np.ndarray] = None
    gamma2: Optional[np.ndarray] = None
    residual_style: str = "two_residuals"

    def __post_init__(self):
        if self.residual_style not in RESIDUAL_STYLES:
            raise InvalidArgumentError(f"unknown residual style {self.residual_style!r}")

    @classmethod
    def init(cls, height, width, dim, rng, residual_style="two_residuals", layerscale=False):
        g1 = g2 = None
        if layerscale:
            g2 = np.full(dim, LAYERSCALE_INIT)
            if residual_style == "two_residuals":
                g1 = np.full(dim, LAYERSCALE_INIT)
        return cls(
            LayerNorm.init(dim),
            GlobalFilter.init(height, width, dim, rng),
            LayerNorm.init(dim),
            Ffn.init(dim, rng),
            g1,
            g2,
            residual_style,
        )

    def to_dict(self):
        d = {
            "norm1.scale": self.norm1.scale,
            "norm1.shift": self.norm1.shift,
            "filter": self.filter.to_real(),
            "norm2.scale": self.norm2.scale,
            "norm2.shift": self.norm2.shift,
            "ffn.w1": self.ffn.w1,
            "ffn.b1": self.ffn.b1,
            "ffn.w2": self.ffn.w2,
            "ffn.b2": self.ffn.b2,
        }
        if self.gamma1 is not None:
            d["gamma1"] = self.gamma1
        if self.gamma2 is not None:
            d["gamma2"] = self.gamma2
        return d

    @classmethod
    def from_dict(cls, d, height, width, residual_style="two_residuals"):
        return cls(
            LayerNorm(d["norm1.scale"], d["norm1.shift"]),
            GlobalFilter.from_real(height, width, d["filter"]),
            LayerNorm(d["norm2.scale"], d["norm2.shift"]),
            Ffn(d["ffn.w1"], d["ffn.b1"], d["ffn.w2"], d["ffn.b2"]),
            d.get("gamma1"),
            d.get("gamma2"),
            residual_style,
        )


def _scaled(v, gamma):
    return v if gamma is None else v * gamma


def block_forward(x, b):
    """Pre-norm GFNet block; shape preserving on ``(..., H, W, D)``."""
    x = as_real(x)
    n1, c_n1 = layer_norm_forward(x, b.norm1)
    g, c_gf = global_filter_forward(n1, b.filter)
    if b.residual_style == "two_residuals":
        x2 = x + _scaled(g, b.gamma1)
        n2, c_n2 = layer_norm_forward(x2, b.norm2)
        f, c_ffn = ffn_forward(n2, b.ffn)
        y = x2 + _scaled(f, b.gamma2)
    else:
        n2, c_n2 = layer_norm_forward(g, b.norm2)
        f, c_ffn = ffn_forward(n2, b.ffn)
        y = x + _scaled(f, b.gamma2)
    return y, (c_n1, c_gf, g, c_n2, f, c_ffn)


def block_backward(dy, cache, b):
    c_n1, c_gf, g, c_n2, f, c_ffn = cache
    grads = {}
    if b.gamma2 is not None:
        grads["gamma2"] = _flat_rows(dy * f).sum(axis=0)
    df = _scaled(dy, b.gamma2)
    dn2, g_ffn = ffn_backward(df, c_ffn, b.ffn)
    dmid, g_n2 = layer_norm_backward(dn2, c_n2, b.norm2)
    if b.residual_style == "two_residuals":
        dx2 = dy + dmid
        if b.gamma1 is not None:
            grads["gamma1"] = _flat_rows(dx2 * g).sum(axis=0)
        dg = _scaled(dx2, b.gamma1)
        dx = dx2
    else:
        dg = dmid
        dx = dy
    dn1, dK = global_filter_backward(dg, c_gf, b.filter)
    dx_n1, g_n1 = layer_norm_backward(dn1, c_n1, b.norm1)
    dx = dx + dx_n1
    grads.update({"norm1." + k: v for k, v in g_n1.items()})
    grads["filter"] = np.stack([dK.real, dK.imag], axis=-1)
    grads.update({"norm2." + k: v for k, v in g_n2.items()})
    grads.update({"ffn." + k: v for k, v in g_ffn.items()})
    return dx, grads


# -- head --------------------------------------------------------------------

def head_forward(x, w, b):
    """Global average pool over the token grid, then a linear classifier."""
    x = as_real(x)
    return x.mean(axis=(-3, -2)) @ w + b


def head_backward(dlogits, x, w):
    h, wd = x.shape[-3], x.shape[-2]
    pooled = x.mean(axis=(-3, -2))
    grads = {"weight": _flat_rows(pooled).T @ _flat_rows(dlogits), "bias": _flat_rows(dlogits).sum(axis=0)}
    dpooled = dlogits @ w.T
    dx = np.broadcast_to(dpooled[..., None, None, :] / (h * wd), x.shape).copy()
    return dx, grads
