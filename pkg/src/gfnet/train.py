"""Desk-scale training: synthetic frequency-band task, loss, AdamW, and gradcheck."""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import log_softmax_lastdim, softmax_lastdim
from .errors import InvalidArgumentError, NonFiniteError
from .fourier import column_multiplicity, fft, ifft, rfft_2d
from .model import init_params, model_backward, model_forward, predict

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.Philox4x64-10+SeedSequence"


def make_rngs(seed, n=3):
    """Independent counter-based streams derived from one seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


# -- synthetic task ------------------------------------------------------------

def radial_frequency(h, w, half=False):
    """Normalized radial frequency of every bin of an ``h x w`` (or half) spectrum."""
    fu = np.minimum(np.arange(h), h - np.arange(h)) / h
    cols = np.arange(w // 2 + 1) if half else np.arange(w)
    fv = np.minimum(cols, w - cols) / w
    return np.hypot(fu[:, None], fv[None, :])


def band_index(h, w, num_bands, half=False):
    """Band of each bin: equal-width annuli over radius (0, 0.5]; corners join the last band.

    The DC bin gets band -1 (excluded).
    """
    rho = radial_frequency(h, w, half)
    idx = np.minimum(np.ceil(rho / (0.5 / num_bands)).astype(int) - 1, num_bands - 1)
    idx[0, 0] = -1
    return idx


@dataclass
class SynthConfig:
    height: int = 32
    width: int = 32
    channels: int = 1
    num_classes: int = 2
    num_train: int = 512
    num_test: int = 256
    seed: int = 0
    leak: float = 0.1


@dataclass
class SynthTask:
    """Images whose spectral energy sits in the annulus matching their label."""

    config: SynthConfig
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def grid(self):
        c = self.config
        return (c.height, c.width, c.channels)

    @property
    def num_classes(self):
        return self.config.num_classes


def _band_images(labels, cfg, rng):
    bands = band_index(cfg.height, cfg.width, cfg.num_classes)
    n = len(labels)
    noise = rng.standard_normal((n, cfg.height, cfg.width, cfg.channels))
    spec = fft(fft(noise, axis=2), axis=1)
    mask = np.where(bands[None, :, :] == labels[:, None, None], 1.0, cfg.leak)
    mask[:, 0, 0] = 0.0
    img = ifft(ifft(spec * mask[..., None], axis=2), axis=1).real
    rms = np.sqrt((img**2).mean(axis=(1, 2, 3), keepdims=True))
    return img / rms


def gen_synth(cfg):
    counts = np.bincount(band_index(cfg.height, cfg.width, cfg.num_classes).ravel() + 1,
                         minlength=cfg.num_classes + 1)[1:]
    if cfg.num_classes < 2 or np.any(counts == 0):
        raise InvalidArgumentError(
            f"{cfg.num_classes} classes cannot each get a frequency band on a {cfg.height}x{cfg.width} grid"
        )
    rng_train, rng_test, rng_lab = make_rngs(cfg.seed)
    sets = []
    for n, rng in ((cfg.num_train, rng_train), (cfg.num_test, rng_test)):
        labels = rng_lab.permutation(np.arange(n) % cfg.num_classes)
        sets.append((_band_images(labels, cfg, rng), labels))
    (tx, ty), (vx, vy) = sets
    return SynthTask(cfg, tx, ty, vx, vy)


def band_power_fractions(img, num_bands):
    """Fraction of (non-DC) spectral power of an ``(H, W, C)`` image in each band."""
    h, w = img.shape[0], img.shape[1]
    P = (np.abs(rfft_2d(img).values) ** 2).sum(axis=-1) * column_multiplicity(w)
    bands = band_index(h, w, num_bands, half=True)
    per = np.array([P[bands == b].sum() for b in range(num_bands)])
    return per / per.sum()


# -- loss ------------------------------------------------------------------------

def cross_entropy(logits, label):
    """Softmax cross entropy; batched inputs return the mean loss.

    Returns ``(loss, dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label))
    batch = logits.reshape(-1, logits.shape[-1])
    if len(labels) != batch.shape[0]:
        raise InvalidArgumentError("one label per row of logits required")
    if np.any((labels < 0) | (labels >= batch.shape[1])):
        raise InvalidArgumentError(f"label out of range for {batch.shape[1]} classes")
    rows = np.arange(batch.shape[0])
    logp = log_softmax_lastdim(batch)
    loss = -logp[rows, labels].mean()
    d = softmax_lastdim(batch)
    d[rows, labels] -= 1.0
    d /= batch.shape[0]
    return float(loss), d.reshape(logits.shape)


# -- optimizer ---------------------------------------------------------------------

@dataclass
class OptimState:
    lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 1.0
    no_decay: frozenset = frozenset()
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads):
    return math.sqrt(sum(float(np.vdot(g, g).real) for g in grads.values()))


def clip_gradients(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def opt_step(params, grads, state):
    """One AdamW step: clip, decoupled decay, bias-corrected moment update.

    Returns new parameter arrays; ``state`` is updated in place and returned.
    """
    grads, _ = clip_gradients(grads, state.clip_norm)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        new = p if k in state.no_decay else p * (1.0 - state.lr * state.weight_decay)
        out[k] = new - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out, state


def lr_at(step, total_steps, warmup_steps, base_lr, min_lr):
    """Linear warm-up, then cosine decay to ``min(min_lr, base_lr)``."""
    floor = min(min_lr, base_lr)
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- training loop -------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    min_lr: float = 1e-5
    clip_norm: float = 1.0
    seed: int = 0


def _first_nonfinite(**tensors):
    for name, t in tensors.items():
        if isinstance(t, dict):
            hit = _first_nonfinite(**{f"{name}.{k}": v for k, v in t.items()})
            if hit:
                return hit
        elif not np.all(np.isfinite(t)):
            return name
    return None


def accuracy(params, cfg, x, y, batch_size=256):
    hits = 0
    for i in range(0, len(x), batch_size):
        hits += int((predict(x[i:i + batch_size], params, cfg).argmax(axis=-1) == y[i:i + batch_size]).sum())
    return hits / len(x)


def loss_and_grads(params, cfg, x, y):
    logits, cache = model_forward(x, params, cfg)
    loss, dlogits = cross_entropy(logits, y)
    return loss, model_backward(dlogits, cache), logits


def train_loop(model_cfg, task, train_cfg=None, params=None, trace_path=None, on_epoch=None):
    """Train ``model_cfg`` on ``task``; returns ``(params, trace)``.

    ``trace`` holds one ``{"epoch", "loss", "train_acc", "test_acc"}`` dict per
    epoch and is mirrored to ``trace_path`` as JSON lines when given.
    """
    tc = train_cfg or TrainConfig()
    rng_init, rng_shuffle, _ = make_rngs(tc.seed)
    if params is None:
        params = init_params(model_cfg, rng_init)
    state = OptimState(
        lr=tc.lr,
        weight_decay=tc.weight_decay,
        clip_norm=tc.clip_norm,
        no_decay=frozenset(k for k, p in params.items() if p.ndim <= 1),
    )
    n = len(task.train_x)
    steps_per_epoch = math.ceil(n / tc.batch_size)
    total = tc.epochs * steps_per_epoch
    warmup = tc.warmup_epochs * steps_per_epoch
    trace = []
    sink = open(trace_path, "w") if trace_path else None
    try:
        for epoch in range(tc.epochs):
            order = rng_shuffle.permutation(n)
            losses = []
            for i in range(0, n, tc.batch_size):
                idx = order[i:i + tc.batch_size]
                loss, grads, logits = loss_and_grads(params, model_cfg, task.train_x[idx], task.train_y[idx])
                bad = _first_nonfinite(logits=logits, loss=np.asarray(loss), grads=grads)
                if bad:
                    raise NonFiniteError(bad, f"epoch {epoch}: non-finite values first seen in {bad!r}")
                state.lr = lr_at(state.step, total, warmup, tc.lr, tc.min_lr)
                params, state = opt_step(params, grads, state)
                bad = _first_nonfinite(params=params)
                if bad:
                    raise NonFiniteError(bad, f"epoch {epoch}: optimizer produced non-finite {bad!r}")
                losses.append(loss * len(idx))
            rec = {
                "epoch": epoch,
                "loss": float(sum(losses) / n),
                "train_acc": accuracy(params, model_cfg, task.train_x, task.train_y),
                "test_acc": accuracy(params, model_cfg, task.test_x, task.test_y),
            }
            trace.append(rec)
            log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, rec["loss"], rec["train_acc"], rec["test_acc"])
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            if on_epoch:
                on_epoch(rec)
    finally:
        if sink:
            sink.close()
    return params, trace


# -- gradient checking -----------------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_err: float
    per_tensor: dict
    checked: int

    def passed(self, tol):
        return self.max_rel_err < tol


def gradcheck(fn, params, eps=1e-5, max_per_tensor=None, rng=None):
    """Compare analytic gradients with central differences.

    ``fn(params) -> (loss, grads)``.  The error of a tensor is the largest
    component deviation ``|a - n|`` divided by the tensor's gradient scale
    ``max(|a|, |n|)`` (relative error in the max norm), which keeps the
    absolute round-off of the differences from swamping near-zero components.
    With ``max_per_tensor`` only a random subset of coordinates is probed.
    """
    rng = rng or np.random.default_rng(0)
    _, analytic = fn(params)
    per, checked = {}, 0
    for name, p in params.items():
        flat_idx = np.arange(p.size)
        if max_per_tensor is not None and p.size > max_per_tensor:
            flat_idx = rng.choice(p.size, max_per_tensor, replace=False)
        a_all = np.asarray(analytic[name])
        worst_abs, scale = 0.0, float(np.max(np.abs(a_all), initial=0.0))
        for fi in flat_idx:
            i = np.unravel_index(fi, p.shape)
            orig = p[i]
            probe = dict(params)
            q = p.copy()
            probe[name] = q
            q[i] = orig + eps
            lp = fn(probe)[0]
            q[i] = orig - eps
            lm = fn(probe)[0]
            num = (lp - lm) / (2 * eps)
            worst_abs = max(worst_abs, abs(a_all[i] - num))
            scale = max(scale, abs(num))
            checked += 1
        per[name] = worst_abs / scale if scale > 0 else 0.0
    return GradcheckReport(max(per.values(), default=0.0), per, checked)
