"""Model configurations, assembly, and exact parameter/FLOP accounting."""

from dataclasses import asdict, dataclass, field
from typing import List, Tuple

import numpy as np

from .core import as_real
from .errors import InvalidArgumentError
from .fourier import half_width
from .gfilter import interpolate_filter, GlobalFilter
from .nn import (
    BlockParams,
    PatchEmbed,
    RESIDUAL_STYLES,
    block_backward,
    block_forward,
    head_backward,
    head_forward,
    patch_embed_backward,
    patch_embed_forward,
)


@dataclass(frozen=True)
class StageConfig:
    num_blocks: int
    channels: int
    downsample: int


@dataclass
class ModelConfig:
    name: str
    stages: List[StageConfig]
    image_size: Tuple[int, int] = (224, 224)
    in_channels: int = 3
    num_classes: int = 1000
    residual_style: str = "two_residuals"
    layerscale: bool = False

    def __post_init__(self):
        self.stages = [s if isinstance(s, StageConfig) else StageConfig(*s) for s in self.stages]
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.residual_style not in RESIDUAL_STYLES:
            raise InvalidArgumentError(f"unknown residual style {self.residual_style!r}")
        if not self.stages:
            raise InvalidArgumentError("a model needs at least one stage")
        self.token_grids()

    @property
    def patch_size(self):
        return self.stages[0].downsample

    @property
    def hierarchical(self):
        return len(self.stages) > 1

    def token_grids(self):
        """Token grid ``(H, W)`` of every stage; raises if any stage is fractional."""
        grids = []
        h, w = self.image_size
        for i, st in enumerate(self.stages):
            if st.downsample < 1 or h % st.downsample or w % st.downsample:
                raise InvalidArgumentError(
                    f"stage {i}: grid {h}x{w} not divisible by downsample {st.downsample}"
                )
            h, w = h // st.downsample, w // st.downsample
            grids.append((h, w))
        return grids

    def with_image_size(self, image_size):
        d = self.to_dict()
        d["image_size"] = list(image_size)
        return ModelConfig.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["stages"] = [[s.num_blocks, s.channels, s.downsample] for s in self.stages]
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stages"] = [StageConfig(*s) for s in d["stages"]]
        return cls(**d)


def _flat(name, blocks, dim, patch):
    return ModelConfig(name, [StageConfig(blocks, dim, patch)])


def _hier(name, blocks, dims, layerscale):
    downs = [4, 2, 2, 2]
    return ModelConfig(name, [StageConfig(b, d, s) for b, d, s in zip(blocks, dims, downs)],
                       layerscale=layerscale)


PRESETS = {
    "ti": lambda: _flat("gfnet-ti", 12, 256, 16),
    "xs": lambda: _flat("gfnet-xs", 12, 384, 16),
    "s": lambda: _flat("gfnet-s", 19, 384, 16),
    "b": lambda: _flat("gfnet-b", 19, 512, 16),
    "h-ti": lambda: _hier("gfnet-h-ti", [3, 3, 10, 3], [64, 128, 256, 512], False),
    "h-s": lambda: _hier("gfnet-h-s", [3, 3, 10, 3], [96, 192, 384, 768], True),
    "h-b": lambda: _hier("gfnet-h-b", [3, 3, 27, 3], [96, 192, 384, 768], True),
    "toy": lambda: ModelConfig("gfnet-toy", [StageConfig(2, 32, 4)], image_size=(32, 32),
                               in_channels=1, num_classes=2),
}


def preset(name):
    key = name.lower().removeprefix("gfnet-")
    if key not in PRESETS:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key]()


# -- parameters ----------------------------------------------------------------

def _block_shapes(h, w, dim, cfg):
    shapes = {
        "norm1.scale": (dim,),
        "norm1.shift": (dim,),
        "filter": (h, half_width(w), dim, 2),
        "norm2.scale": (dim,),
        "norm2.shift": (dim,),
        "ffn.w1": (dim, 4 * dim),
        "ffn.b1": (4 * dim,),
        "ffn.w2": (4 * dim, dim),
        "ffn.b2": (dim,),
    }
    if cfg.layerscale:
        if cfg.residual_style == "two_residuals":
            shapes["gamma1"] = (dim,)
        shapes["gamma2"] = (dim,)
    return shapes


def param_shapes(cfg):
    """Ordered ``name -> shape`` map of every learnable tensor."""
    shapes = {}
    in_ch = cfg.in_channels
    for s, (st, (h, w)) in enumerate(zip(cfg.stages, cfg.token_grids())):
        shapes[f"stages.{s}.embed.weight"] = (st.downsample * st.downsample * in_ch, st.channels)
        shapes[f"stages.{s}.embed.bias"] = (st.channels,)
        for b in range(st.num_blocks):
            for k, shp in _block_shapes(h, w, st.channels, cfg).items():
                shapes[f"stages.{s}.blocks.{b}.{k}"] = shp
        in_ch = st.channels
    shapes["head.weight"] = (in_ch, cfg.num_classes)
    shapes["head.bias"] = (cfg.num_classes,)
    return shapes


def param_count(cfg):
    return int(sum(int(np.prod(shp)) for shp in param_shapes(cfg).values()))


def init_params(cfg, rng):
    params = {}
    in_ch = cfg.in_channels
    for s, (st, (h, w)) in enumerate(zip(cfg.stages, cfg.token_grids())):
        pe = PatchEmbed.init(st.downsample, in_ch, st.channels, rng)
        params[f"stages.{s}.embed.weight"] = pe.weight
        params[f"stages.{s}.embed.bias"] = pe.bias
        for b in range(st.num_blocks):
            blk = BlockParams.init(h, w, st.channels, rng, cfg.residual_style, cfg.layerscale)
            for k, v in blk.to_dict().items():
                params[f"stages.{s}.blocks.{b}.{k}"] = v
        in_ch = st.channels
    params["head.weight"] = rng.normal(0.0, 0.02, (in_ch, cfg.num_classes))
    params["head.bias"] = np.zeros(cfg.num_classes)
    assert {k: v.shape for k, v in params.items()} == param_shapes(cfg)
    return params


def _sub(params, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def _patch_embed(params, s, st, in_ch):
    return PatchEmbed(st.downsample, st.downsample, in_ch,
                      params[f"stages.{s}.embed.weight"], params[f"stages.{s}.embed.bias"])


# -- FLOPs -----------------------------------------------------------------------

MIXER_KINDS = ("global_filter", "self_attention", "spatial_mlp", "depthwise_conv")


def ceil_log2(n):
    return (int(n) - 1).bit_length()


def mixer_flops(kind, h, w, d, k=3):
    """Token-mixer cost with every big-O constant set to one (integer arithmetic)."""
    h, w, d, k = int(h), int(w), int(d), int(k)
    if min(h, w, d, k) < 1:
        raise InvalidArgumentError("mixer dimensions must be positive")
    L = h * w
    if kind == "global_filter":
        return L * d * ceil_log2(L) + L * d
    if kind == "self_attention":
        return L * d * d + L * L * d
    if kind == "spatial_mlp":
        return L * L * d
    if kind == "depthwise_conv":
        return k * k * L * d
    raise InvalidArgumentError(f"unknown mixer kind {kind!r}")


def ffn_flops(h, w, d):
    return 8 * h * w * d * d


@dataclass
class FlopsReport:
    """FLOPs under the unit-constant convention.

    ``total`` is the model actually built (embeddings + global filters + FFNs +
    head).  ``attn_flops``, ``mlp_flops`` and ``dwconv_flops`` are what the
    same stack would spend on its token mixers with the mixer swapped out;
    they are comparisons and are not part of ``total``.
    """

    convention: str
    embed_flops: int
    gf_flops: int
    ffn_flops: int
    head_flops: int
    attn_flops: int
    mlp_flops: int
    dwconv_flops: int
    total: int = field(default=0)

    def __post_init__(self):
        self.total = self.embed_flops + self.gf_flops + self.ffn_flops + self.head_flops


def flops_count(cfg, dwconv_kernel=3):
    parts = dict(embed=0, gf=0, ffn=0, attn=0, mlp=0, dwconv=0)
    in_ch = cfg.in_channels
    for st, (h, w) in zip(cfg.stages, cfg.token_grids()):
        d = st.channels
        parts["embed"] += h * w * st.downsample * st.downsample * in_ch * d
        n = st.num_blocks
        parts["gf"] += n * mixer_flops("global_filter", h, w, d)
        parts["attn"] += n * mixer_flops("self_attention", h, w, d)
        parts["mlp"] += n * mixer_flops("spatial_mlp", h, w, d)
        parts["dwconv"] += n * mixer_flops("depthwise_conv", h, w, d, dwconv_kernel)
        parts["ffn"] += n * ffn_flops(h, w, d)
        in_ch = d
    return FlopsReport(
        convention="Table-1-convention",
        embed_flops=parts["embed"],
        gf_flops=parts["gf"],
        ffn_flops=parts["ffn"],
        head_flops=in_ch * cfg.num_classes,
        attn_flops=parts["attn"],
        mlp_flops=parts["mlp"],
        dwconv_flops=parts["dwconv"],
    )


# -- forward / backward ----------------------------------------------------------

@dataclass
class ModelCache:
    cfg: ModelConfig
    params: dict
    inputs: list
    block_caches: list
    features: np.ndarray


def model_forward(img, params, cfg):
    """Logits for ``img`` of shape ``(..., H_img, W_img, C)``; returns ``(logits, cache)``."""
    img = as_real(img)
    if img.ndim < 3 or img.shape[-3:] != (*cfg.image_size, cfg.in_channels):
        raise InvalidArgumentError(
            f"image shape {img.shape[-3:]} does not match config {(*cfg.image_size, cfg.in_channels)}"
        )
    x = img
    inputs, block_caches = [], []
    in_ch = cfg.in_channels
    for s, (st, (h, w)) in enumerate(zip(cfg.stages, cfg.token_grids())):
        inputs.append(x)
        x = patch_embed_forward(x, _patch_embed(params, s, st, in_ch))
        stage_caches = []
        for b in range(st.num_blocks):
            blk = BlockParams.from_dict(_sub(params, f"stages.{s}.blocks.{b}."), h, w, cfg.residual_style)
            x, c = block_forward(x, blk)
            stage_caches.append((blk, c))
        block_caches.append(stage_caches)
        in_ch = st.channels
    logits = head_forward(x, params["head.weight"], params["head.bias"])
    return logits, ModelCache(cfg, params, inputs, block_caches, x)


def predict(img, params, cfg):
    return model_forward(img, params, cfg)[0]


def model_backward(dlogits, cache):
    """Gradients for every parameter tensor, keyed like ``params``."""
    cfg, params = cache.cfg, cache.params
    grads = {}
    dx, g = head_backward(dlogits, cache.features, params["head.weight"])
    grads["head.weight"], grads["head.bias"] = g["weight"], g["bias"]
    in_chs = [cfg.in_channels] + [st.channels for st in cfg.stages[:-1]]
    for s in reversed(range(len(cfg.stages))):
        for b in reversed(range(cfg.stages[s].num_blocks)):
            blk, c = cache.block_caches[s][b]
            dx, g = block_backward(dx, c, blk)
            for k, v in g.items():
                grads[f"stages.{s}.blocks.{b}.{k}"] = v
        pe = _patch_embed(params, s, cfg.stages[s], in_chs[s])
        dx, g = patch_embed_backward(dx, cache.inputs[s], pe)
        grads[f"stages.{s}.embed.weight"] = g["weight"]
        grads[f"stages.{s}.embed.bias"] = g["bias"]
    return {k: grads[k] for k in params}


def adapt_resolution(params, cfg, new_image_size, method="cubic"):
    """Re-target a model to a new input size by interpolating every global filter.

    Returns ``(params, cfg)``; non-filter tensors are shared, not copied.
    """
    new_cfg = cfg.with_image_size(new_image_size)
    if new_cfg.image_size == cfg.image_size:
        return dict(params), new_cfg
    out = dict(params)
    for s, ((h, w), (nh, nw)) in enumerate(zip(cfg.token_grids(), new_cfg.token_grids())):
        for b in range(cfg.stages[s].num_blocks):
            key = f"stages.{s}.blocks.{b}.filter"
            f = GlobalFilter.from_real(h, w, params[key])
            out[key] = interpolate_filter(f, nh, nw, method).to_real()
    return out, new_cfg
