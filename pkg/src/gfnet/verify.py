"""Self-contained invariant and oracle suite behind ``gfnet verify``.

Each suite is a list of named property checks on small random instances.  The
runner stops at the first failure and reports ``module/property``.
"""

import math
import os
import tempfile
import time

import numpy as np

from . import bench, fourier, gfilter, model, nn, persist, train
from .fourier import SpectrumHalf, half_width


class VerifyFailure(AssertionError):
    def __init__(self, module, prop, detail):
        self.module, self.prop = module, prop
        super().__init__(f"{module}/{prop}: {detail}")


def _close(a, b, tol, what):
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))
    assert err < tol, f"{what}: max error {err:.3e} >= {tol:.0e}"


def _circconv_1d(x, h):
    n = len(x)
    return np.array([sum(h[m] * x[(k - m) % n] for m in range(n)) for k in range(n)])


# -- fourier ---------------------------------------------------------------------

def fourier_fft_matches_naive(rng):
    for n in range(1, 65):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        _close(fourier.fft_1d(x), fourier.dft_1d_naive(x), 1e-10, f"N={n}")


def fourier_conjugate_symmetry(rng):
    for n in (7, 8, 14):
        X = fourier.fft_1d(rng.standard_normal(n))
        _close(X[(-np.arange(n)) % n], np.conj(X), 1e-11, f"1D N={n}")
    X = fourier.fft_2d(rng.standard_normal((6, 9)))
    _close(X[(-np.arange(6)) % 6][:, (-np.arange(9)) % 9], np.conj(X), 1e-11, "2D")


def fourier_parseval(rng):
    x = rng.standard_normal(33)
    assert abs(np.sum(x**2) - np.sum(np.abs(fourier.fft_1d(x)) ** 2) / 33) < 1e-10
    x = rng.standard_normal((5, 12))
    assert abs(np.sum(x**2) - np.sum(np.abs(fourier.fft_2d(x)) ** 2) / 60) < 1e-10


def fourier_linearity(rng):
    x, y = rng.standard_normal((2, 20))
    _close(fourier.fft_1d(2.5 * x - 0.7 * y),
           2.5 * fourier.fft_1d(x) - 0.7 * fourier.fft_1d(y), 1e-11, "linearity")


def fourier_convolution_theorem(rng):
    for n in (5, 16, 32):
        x, h = rng.standard_normal((2, n))
        _close(fourier.fft_1d(_circconv_1d(x, h)), fourier.fft_1d(x) * fourier.fft_1d(h), 1e-9, f"1D N={n}")
    x, h = rng.standard_normal((2, 5, 7, 1))
    y = gfilter.circular_conv_oracle(x, h)
    _close(fourier.fft_2d(y[..., 0]), fourier.fft_2d(x[..., 0]) * fourier.fft_2d(h[..., 0]), 1e-9, "2D")


def fourier_real_round_trip(rng):
    for shape in ((4, 4, 1), (5, 7, 4), (14, 14, 4)):
        x = rng.standard_normal(shape)
        _close(fourier.irfft_2d(fourier.rfft_2d(x)), x, 1e-10, f"shape {shape}")


# -- gfilter -------------------------------------------------------------------------

def _random_filter(rng, h, w, d):
    wt = rng.standard_normal((h, half_width(w), d)) + 1j * rng.standard_normal((h, half_width(w), d))
    return gfilter.GlobalFilter(h, w, wt)


def gfilter_oracle_equivalence(rng):
    for h, w in ((4, 4), (5, 7), (8, 8), (14, 14)):
        for d in (1, 3):
            f = _random_filter(rng, h, w, d)
            x = rng.standard_normal((h, w, d))
            y, _ = gfilter.global_filter_forward(x, f)
            _close(y, gfilter.circular_conv_oracle(x, gfilter.spatial_filter_of(f)), 1e-9, f"{h}x{w}x{d}")


def gfilter_linearity(rng):
    f = _random_filter(rng, 6, 5, 2)
    x1, x2 = rng.standard_normal((2, 6, 5, 2))
    fwd = lambda x: gfilter.global_filter_forward(x, f)[0]
    _close(fwd(1.5 * x1 - 2 * x2), 1.5 * fwd(x1) - 2 * fwd(x2), 1e-10, "linearity")


def gfilter_gradient(rng):
    f = _random_filter(rng, 6, 6, 2)
    x = rng.standard_normal((6, 6, 2))
    probe = rng.standard_normal((6, 6, 2))

    def fn(p):
        ff = gfilter.GlobalFilter.from_real(6, 6, p["filter"])
        y, c = gfilter.global_filter_forward(p["x"], ff)
        dx, dK = gfilter.global_filter_backward(probe, c, ff)
        return float(np.sum(y * probe)), {"x": dx, "filter": np.stack([dK.real, dK.imag], -1)}

    rep = train.gradcheck(fn, {"x": x, "filter": f.to_real()})
    assert rep.passed(1e-6), f"max rel err {rep.max_rel_err:.3e}"


def gfilter_parameter_halving(rng):
    f = gfilter.GlobalFilter.constant(14, 14, 384)
    assert f.num_params == 86016, f.num_params


def gfilter_interpolation_identity(rng):
    f = _random_filter(rng, 7, 6, 2)
    g = gfilter.interpolate_filter(f, 7, 6)
    assert np.array_equal(g.weight, f.weight)
    c = gfilter.GlobalFilter.constant(8, 8, 2, 0.3 - 0.2j)
    _close(gfilter.interpolate_filter(c, 13, 10).weight, 0.3 - 0.2j, 1e-12, "constant")


# -- nn ----------------------------------------------------------------------------------

def nn_block_gradient(rng):
    for style in nn.RESIDUAL_STYLES:
        blk = nn.BlockParams.init(4, 4, 8, rng, style, layerscale=True)
        blk.gamma2 = rng.standard_normal(8)
        if blk.gamma1 is not None:
            blk.gamma1 = rng.standard_normal(8)
        blk.filter.weight = blk.filter.weight * 20
        x = rng.standard_normal((4, 4, 8))
        probe = rng.standard_normal((4, 4, 8))

        def fn(p):
            b = nn.BlockParams.from_dict(p, 4, 4, style)
            y, c = nn.block_forward(p["x"], b)
            dx, g = nn.block_backward(probe, c, b)
            g["x"] = dx
            return float(np.sum(y * probe)), g

        params = dict(blk.to_dict(), x=x)
        rep = train.gradcheck(fn, params, max_per_tensor=12, rng=rng)
        assert rep.passed(1e-6), f"{style}: max rel err {rep.max_rel_err:.3e}"


def nn_layer_norm_moments(rng):
    x = rng.standard_normal((3, 3, 5)) * 4 + 2
    y, _ = nn.layer_norm_forward(x, nn.LayerNorm.init(5))
    assert np.max(np.abs(y.mean(-1))) < 1e-10
    assert np.max(np.abs(y.var(-1) - 1)) < 1e-6


def nn_dead_branches_identity(rng):
    x = rng.standard_normal((4, 4, 8))
    for _ in range(5):
        blk = nn.BlockParams.init(4, 4, 8, rng, layerscale=True)
        blk.gamma1[:] = 0
        blk.gamma2[:] = 0
        x2, _ = nn.block_forward(x, blk)
        assert np.array_equal(x2, x)


# -- model ---------------------------------------------------------------------------------

def model_param_budgets(rng):
    for name, target in (("ti", 7e6), ("xs", 16e6), ("s", 25e6), ("b", 43e6)):
        n = model.param_count(model.preset(name))
        assert abs(n - target) <= 0.1 * target, f"{name}: {n}"


def model_flops_formulas(rng):
    assert model.mixer_flops("global_filter", 14, 14, 384) == 677376
    assert model.mixer_flops("spatial_mlp", 14, 14, 384) == 14751744
    for h, w, d in ((14, 14, 384), (7, 9, 16), (56, 56, 64)):
        L = h * w
        if L > math.ceil(math.log2(L)) + 1:
            assert model.mixer_flops("global_filter", h, w, d) < model.mixer_flops("spatial_mlp", h, w, d)


def model_deterministic(rng):
    cfg = model.preset("toy")
    params = model.init_params(cfg, np.random.default_rng(1))
    img = rng.standard_normal((2, 32, 32, 1))
    a = model.predict(img, params, cfg)
    b = model.predict(img, params, cfg)
    assert np.array_equal(a, b)
    same, _ = model.adapt_resolution(params, cfg, cfg.image_size)
    assert all(np.array_equal(same[k], params[k]) for k in params)


# -- train -----------------------------------------------------------------------------------

def train_clipping(rng):
    g = {"a": rng.standard_normal(10) * 5, "b": rng.standard_normal((3, 3))}
    clipped, _ = train.clip_gradients(g, 1.0)
    assert train.global_norm(clipped) <= 1 + 1e-12


def train_cross_entropy(rng):
    loss, _ = train.cross_entropy(np.zeros(4), 1)
    assert abs(loss - math.log(4)) < 1e-12
    loss, d = train.cross_entropy(np.array([1e4, -1e4, 3.0]), 2)
    assert np.isfinite(loss) and np.all(np.isfinite(d))


def train_toy_gradient(rng):
    cfg = model.preset("toy")
    params = model.init_params(cfg, np.random.default_rng(2))
    x = rng.standard_normal((3, 32, 32, 1))
    y = np.array([0, 1, 1])

    def fn(p):
        loss, grads, _ = train.loss_and_grads(p, cfg, x, y)
        return loss, grads

    rep = train.gradcheck(fn, params, max_per_tensor=3, rng=rng)
    assert rep.passed(1e-5), f"max rel err {rep.max_rel_err:.3e}"


# -- bench -----------------------------------------------------------------------------------

def bench_reference_kernels(rng):
    for kind in ("global_filter", "self_attention", "spatial_mlp", "depthwise_conv(3)"):
        bench.self_check(bench.MixerKind.parse(kind), rng)


def bench_power_law_fit(rng):
    L = np.array([64, 256, 1024, 4096])
    fit = bench.fit_power_law(L, 3e-9 * L**2.0)
    assert abs(fit.exponent - 2.0) < 0.01


# -- persist ----------------------------------------------------------------------------------

def persist_round_trip(rng):
    cfg = model.preset("toy")
    params = model.init_params(cfg, rng)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.gfck")
        persist.save_checkpoint(path, params, cfg)
        ck = persist.load_checkpoint(path)
        assert ck.config == cfg
        assert all(np.array_equal(ck.params[k], params[k]) for k in params)
        with open(path, "rb") as fh:
            blob = fh.read()
        try:
            persist.decode_checkpoint(blob[: len(blob) - 13])
        except persist.CorruptCheckpointError:
            pass
        else:
            raise AssertionError("truncated checkpoint was accepted")


def persist_band_partition(rng):
    cfg = model.preset("toy")
    doc = persist.export_filters(model.init_params(cfg, rng), cfg)
    for blk in doc["blocks"]:
        total = sum(b["power"] for b in blk["band_power"])
        assert abs(total - blk["total_power"]) < 1e-9


SUITES = {
    "fourier": [fourier_fft_matches_naive, fourier_conjugate_symmetry, fourier_parseval,
                fourier_linearity, fourier_convolution_theorem, fourier_real_round_trip],
    "gfilter": [gfilter_oracle_equivalence, gfilter_linearity, gfilter_gradient,
                gfilter_parameter_halving, gfilter_interpolation_identity],
    "nn": [nn_block_gradient, nn_layer_norm_moments, nn_dead_branches_identity],
    "model": [model_param_budgets, model_flops_formulas, model_deterministic],
    "train": [train_clipping, train_cross_entropy, train_toy_gradient],
    "bench": [bench_reference_kernels, bench_power_law_fit],
    "persist": [persist_round_trip, persist_band_partition],
}


def run(seed=0, out=print):
    """Run every suite; raises :class:`VerifyFailure` at the first broken property."""
    rng = np.random.default_rng(seed)
    for module, checks in SUITES.items():
        t0 = time.perf_counter()
        for check in checks:
            prop = check.__name__[len(module) + 1:]
            try:
                check(rng)
            except Exception as exc:
                raise VerifyFailure(module, prop, exc) from exc
        out(f"{module:8s} ok  {len(checks)} properties  {time.perf_counter() - t0:.1f}s")
    return True
