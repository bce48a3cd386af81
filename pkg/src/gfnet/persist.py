"""Checkpoint container, atomic file writes, and learned-filter exports.

Checkpoint layout (all integers little-endian)::

    b"GFCK" | u32 format_version | u64 config_json_len | config JSON (UTF-8)
    then per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f64 payload

The config JSON holds ``{"model": ModelConfig, "rng_algorithm": str,
"step": int, "meta": {...}}``.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptCheckpointError, InvalidArgumentError
from .fourier import column_multiplicity
from .gfilter import GlobalFilter, spatial_filter_of
from .model import ModelConfig
from .train import RNG_ALGORITHM, radial_frequency

MAGIC = b"GFCK"
FORMAT_VERSION = 1
DEFAULT_BANDS = 8


def atomic_write(path, write_fn, mode="wb"):
    """Write through a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, mode) as fh:
            write_fn(fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Checkpoint:
    params: dict
    config: ModelConfig
    step: int = 0
    rng_algorithm: str = RNG_ALGORITHM
    meta: dict = field(default_factory=dict)


def encode_checkpoint(ckpt):
    header = json.dumps(
        {
            "model": ckpt.config.to_dict(),
            "rng_algorithm": ckpt.rng_algorithm,
            "step": int(ckpt.step),
            "meta": ckpt.meta,
        },
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header]
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.data):
            raise CorruptCheckpointError(
                f"truncated while reading {what}: need {n} bytes, {len(self.data) - self.pos} left",
                self.pos,
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data):
    r = _Reader(memoryview(data))
    if bytes(r.take(4, "magic")) != MAGIC:
        raise CorruptCheckpointError("bad magic, not a GFCK checkpoint", 0)
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported format version {version}", 4)
    (hlen,) = r.unpack("<Q", "config length")
    at = r.pos
    raw = bytes(r.take(hlen, "config json"))
    try:
        header = json.loads(raw.decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"unreadable config: {exc}", at) from None
    params = {}
    while r.pos < len(data):
        at = r.pos
        (nlen,) = r.unpack("<I", "tensor name length")
        try:
            name = bytes(r.take(nlen, "tensor name")).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptCheckpointError("tensor name is not UTF-8", at) from None
        (rank,) = r.unpack("<I", f"rank of {name!r}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name!r}")
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(8 * count, f"payload of {name!r}")
        if name in params:
            raise CorruptCheckpointError(f"duplicate tensor {name!r}", at)
        params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return Checkpoint(params, config, header.get("step", 0),
                      header.get("rng_algorithm", ""), header.get("meta", {}))


def save_checkpoint(path, params, cfg, meta=None, step=0):
    ckpt = Checkpoint(params, cfg, step, RNG_ALGORITHM, dict(meta or {}))
    blob = encode_checkpoint(ckpt)
    atomic_write(path, lambda fh: fh.write(blob))


def load_checkpoint(path):
    """Returns a :class:`Checkpoint`; nothing is returned unless every byte validates."""
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# -- filter export -------------------------------------------------------------

def band_powers(weight, width, num_bands=DEFAULT_BANDS):
    """Channel-averaged power of a half-spectrum filter over radial annuli.

    Power per bin is ``mean_d |K[u, v, d]|^2`` weighted by how many full-spectrum
    bins the half-spectrum column represents.  Annuli split ``[0, rho_max]``
    evenly, where ``rho_max`` is the largest normalized radius on the grid.
    """
    h = weight.shape[0]
    power = (np.abs(weight) ** 2).mean(axis=-1) * column_multiplicity(width)
    rho = radial_frequency(h, width, half=True)
    mult = np.broadcast_to(column_multiplicity(width), rho.shape)
    rho_max = rho.max()
    if rho_max > 0:
        idx = np.minimum((rho / rho_max * num_bands).astype(int), num_bands - 1)
    else:
        idx = np.zeros_like(rho, dtype=int)
    bands = []
    for b in range(num_bands):
        sel = idx == b
        bins = int(mult[sel].sum())
        p = float(power[sel].sum())
        bands.append({"band": b, "power": p, "bins": bins, "mean_power": p / bins if bins else 0.0})
    return bands, float(power.sum())


def export_filters(params, cfg, num_bands=DEFAULT_BANDS):
    """Plot-ready summary of every block's filter."""
    blocks = []
    for s, (st, (h, w)) in enumerate(zip(cfg.stages, cfg.token_grids())):
        for b in range(st.num_blocks):
            f = GlobalFilter.from_real(h, w, params[f"stages.{s}.blocks.{b}.filter"])
            bands, total = band_powers(f.weight, w, num_bands)
            blocks.append(
                {
                    "stage": s,
                    "block": b,
                    "height": h,
                    "width": w,
                    "magnitude": np.abs(f.weight).mean(axis=-1).tolist(),
                    "spatial": spatial_filter_of(f).mean(axis=-1).tolist(),
                    "band_power": bands,
                    "total_power": total,
                }
            )
    return {"model": cfg.name, "num_bands": num_bands, "blocks": blocks}


def export_filters_file(ckpt_path, out_path, num_bands=DEFAULT_BANDS):
    ckpt = load_checkpoint(ckpt_path)
    doc = export_filters(ckpt.params, ckpt.config, num_bands)
    text = json.dumps(doc)
    atomic_write(out_path, lambda fh: fh.write(text), mode="w")
    return doc
