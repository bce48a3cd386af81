"""Reference token mixers and a CPU timing harness for their scaling with L."""

import csv
import logging
import math
import re
import time
from dataclasses import dataclass

import numpy as np

from .core import as_real, softmax_lastdim
from .errors import InvalidArgumentError
from .fourier import half_width
from .gfilter import GlobalFilter, circular_conv_oracle, global_filter_forward, spatial_filter_of
from .model import mixer_flops

log = logging.getLogger(__name__)

CSV_HEADER = ["mixer", "tokens", "dim", "reps", "median_seconds", "transient_bytes", "flops"]
DEFAULT_MEMORY_BUDGET = 1 << 31


@dataclass(frozen=True)
class MixerKind:
    name: str
    k: int = 1

    def __post_init__(self):
        if self.name not in ("global_filter", "self_attention", "spatial_mlp", "depthwise_conv"):
            raise InvalidArgumentError(f"unknown mixer {self.name!r}")
        if self.name == "depthwise_conv" and (self.k < 1 or self.k % 2 == 0):
            raise InvalidArgumentError("depthwise_conv needs an odd kernel size >= 1")

    @property
    def label(self):
        return f"depthwise_conv({self.k})" if self.name == "depthwise_conv" else self.name

    @classmethod
    def parse(cls, text):
        """Accepts ``global_filter``, ``spatial_mlp``, ``self_attention``, ``depthwise_conv(5)``."""
        m = re.fullmatch(r"\s*(\w+)\s*(?:\(\s*(\d+)\s*\))?\s*", text)
        if not m:
            raise InvalidArgumentError(f"cannot parse mixer {text!r}")
        name, k = m.group(1), m.group(2)
        if name == "depthwise_conv":
            return cls(name, int(k) if k else 3)
        if k:
            raise InvalidArgumentError(f"mixer {name!r} takes no kernel size")
        return cls(name)


def init_mixer_params(kind, h, w, d, rng):
    if kind.name == "global_filter":
        return {"filter": GlobalFilter.init(h, w, d, rng)}
    if kind.name == "self_attention":
        s = 1.0 / math.sqrt(d)
        return {k: rng.normal(0.0, s, (d, d)) for k in ("wq", "wk", "wv", "wo")}
    if kind.name == "spatial_mlp":
        return {"weight": rng.normal(0.0, 1.0 / math.sqrt(h * w), (h * w, h * w))}
    return {"kernel": rng.normal(0.0, 1.0 / kind.k, (kind.k, kind.k, d))}


def mixer_forward(kind, x, params):
    """Shape-preserving token mixing of ``x`` with shape ``(H, W, D)``."""
    x = as_real(x)
    if x.ndim != 3:
        raise InvalidArgumentError(f"mixer input must be (H, W, D), got {x.shape}")
    h, w, d = x.shape
    L = h * w
    if kind.name == "global_filter":
        return global_filter_forward(x, params["filter"])[0]
    tokens = x.reshape(L, d)
    if kind.name == "self_attention":
        if params["wq"].shape != (d, d):
            raise InvalidArgumentError("attention projections must be D x D")
        q, k, v = tokens @ params["wq"], tokens @ params["wk"], tokens @ params["wv"]
        attn = softmax_lastdim(q @ k.T / math.sqrt(d))
        return ((attn @ v) @ params["wo"]).reshape(h, w, d)
    if kind.name == "spatial_mlp":
        if params["weight"].shape != (L, L):
            raise InvalidArgumentError(f"spatial MLP weight must be {L}x{L}")
        return (params["weight"] @ tokens).reshape(h, w, d)
    ker = params["kernel"]
    if ker.shape != (kind.k, kind.k, d):
        raise InvalidArgumentError(f"kernel must be {(kind.k, kind.k, d)}")
    r = kind.k // 2
    out = np.zeros_like(x)
    for i in range(kind.k):
        for j in range(kind.k):
            # circular padding: out[m, n] += ker[i, j] * x[m + i - r, n + j - r]
            out += ker[i, j] * np.roll(x, (r - i, r - j), axis=(0, 1))
    return out


def mixer_oracle(kind, x, params):
    """Per-element loop formulation used to certify :func:`mixer_forward`."""
    x = as_real(x)
    h, w, d = x.shape
    L = h * w
    t = x.reshape(L, d)
    out = np.zeros((L, d))
    if kind.name == "global_filter":
        return circular_conv_oracle(x, spatial_filter_of(params["filter"]))
    if kind.name == "self_attention":
        wq, wk, wv, wo = (params[k] for k in ("wq", "wk", "wv", "wo"))
        for a in range(L):
            scores = [float(np.dot(t[a] @ wq, t[b] @ wk)) / math.sqrt(d) for b in range(L)]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            z = sum(e)
            acc = np.zeros(d)
            for b in range(L):
                acc += (e[b] / z) * (t[b] @ wv)
            out[a] = acc @ wo
        return out.reshape(h, w, d)
    if kind.name == "spatial_mlp":
        W = params["weight"]
        for a in range(L):
            for b in range(L):
                out[a] += W[a, b] * t[b]
        return out.reshape(h, w, d)
    ker = params["kernel"]
    r = kind.k // 2
    y = np.zeros_like(x)
    for m in range(h):
        for n in range(w):
            for c in range(d):
                y[m, n, c] = sum(
                    ker[i, j, c] * x[(m + i - r) % h, (n + j - r) % w, c]
                    for i in range(kind.k)
                    for j in range(kind.k)
                )
    return y


def self_check(kind, rng=None, tol=1e-9):
    """Compare kernel and oracle on a small instance; returns the max abs error."""
    rng = rng or np.random.default_rng(0)
    x = rng.standard_normal((4, 5, 3))
    params = init_mixer_params(kind, 4, 5, 3, rng)
    err = float(np.max(np.abs(mixer_forward(kind, x, params) - mixer_oracle(kind, x, params))))
    if not err < tol:
        raise AssertionError(f"{kind.label}: kernel disagrees with loop oracle by {err:.3e}")
    return err


def transient_bytes(kind, h, w, d):
    """Bytes of intermediates one forward call allocates (parameters excluded)."""
    L = h * w
    real, cplx = 8, 16
    if kind.name == "global_filter":
        spec = h * half_width(w) * d
        # width-pass spectrum, half spectrum, product, full-width rows, output
        return cplx * (L * d + 2 * spec + L * d) + real * L * d
    if kind.name == "self_attention":
        return real * (3 * L * d + 2 * L * L + 2 * L * d)
    if kind.name == "spatial_mlp":
        return real * L * d
    return real * 2 * L * d


@dataclass
class BenchResult:
    mixer: MixerKind
    tokens: int
    dim: int
    reps: int
    median_wall_time: float
    peak_transient_bytes: int
    flops_table1: int

    def row(self):
        return [self.mixer.label, self.tokens, self.dim, self.reps,
                f"{self.median_wall_time:.9g}", self.peak_transient_bytes, self.flops_table1]


def median_time(fn, reps=9, warmup=2):
    if reps < 5 or warmup < 2:
        raise InvalidArgumentError("timing needs reps >= 5 and warmup >= 2")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def run_sweep(kinds, token_counts, dim, reps=9, warmup=2, seed=0,
              memory_budget=DEFAULT_MEMORY_BUDGET):
    """Time each mixer on square grids with ``L`` tokens.

    Configurations whose intermediates would exceed ``memory_budget`` bytes are
    skipped with a warning.
    """
    kinds = [MixerKind.parse(k) if isinstance(k, str) else k for k in kinds]
    sides = []
    for L in token_counts:
        side = math.isqrt(L)
        if side * side != L:
            raise InvalidArgumentError(f"token count {L} is not a perfect square")
        sides.append(side)
    rng = np.random.default_rng(seed)
    results = []
    with _single_thread():
        for kind in kinds:
            self_check(kind)
            for side in sides:
                L = side * side
                nbytes = transient_bytes(kind, side, side, dim)
                if nbytes > memory_budget:
                    log.warning("skipping %s at L=%d: needs %d bytes", kind.label, L, nbytes)
                    continue
                x = rng.standard_normal((side, side, dim))
                params = init_mixer_params(kind, side, side, dim, rng)
                t = median_time(lambda: mixer_forward(kind, x, params), reps, warmup)
                del params
                flops = mixer_flops(kind.name, side, side, dim, kind.k)
                results.append(BenchResult(kind, L, dim, reps, t, nbytes, flops))
                log.info("%s L=%d median %.6fs", kind.label, L, t)
    return results


@dataclass
class ScalingFit:
    exponent: float
    residual: float
    points: int


def fit_power_law(tokens, times):
    """Least-squares slope of log(time) against log(L), with RMS log residual."""
    L = np.asarray(tokens, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if len(L) < 3:
        raise InvalidArgumentError("scaling fit needs at least 3 token counts")
    if L.max() / L.min() < 16:
        raise InvalidArgumentError("token counts must span at least a factor of 16")
    A = np.stack([np.log(L), np.ones_like(L)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(t), rcond=None)
    resid = np.log(t) - A @ coef
    return ScalingFit(float(coef[0]), float(np.sqrt(np.mean(resid**2))), len(L))


def fit_scaling(results):
    """Scaling exponent per mixer label."""
    groups = {}
    for r in results:
        groups.setdefault(r.mixer.label, []).append(r)
    fits = {}
    for label, rs in groups.items():
        rs = sorted(rs, key=lambda r: r.tokens)
        fits[label] = fit_power_law([r.tokens for r in rs], [r.median_wall_time for r in rs])
    if not fits:
        raise InvalidArgumentError("no results to fit")
    return fits


def write_csv(results, path):
    from .persist import atomic_write

    def emit(fh):
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for r in results:
            wr.writerow(r.row())

    atomic_write(path, emit, mode="w")


def read_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != CSV_HEADER:
            raise InvalidArgumentError(f"unexpected bench CSV header {header}")
        out = []
        for row in rd:
            out.append(BenchResult(MixerKind.parse(row[0]), int(row[1]), int(row[2]), int(row[3]),
                                   float(row[4]), int(row[5]), int(row[6])))
        return out
