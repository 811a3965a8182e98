"""Two-stream manipulation localization network.

Local stream: plain transformer blocks, each topped with a PDC head.
Global stream: raster-masked attention blocks. Four LWMs fuse the streams
per stage; forgery and boundary decoders read the fused pyramid, the image
decoder reads the global pyramid only.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import (
    GlobalEncoder,
    SelfAttentionBlock,
    global_encoder_forward,
    merge_tokens,
    stage_grids,
    unpool_matrix,
)
from .fusion import LwmModule, lwm_fuse
from .nn import Conv2d, Module, map_to_tokens, param, tokens_to_map
from .pdc import PdcHead, pdc_head_forward
from .tensor import ShapeError, Tensor
from .tensor import ops


@dataclass
class ModelConfig:
    # at 64 x 64, patch 8 or the narrower widths fall short of the smoke targets within 2000 steps
    patch_size: int = 4
    widths: tuple = (32, 64, 128, 256)
    heads: int = 1
    mlp_ratio: int = 2
    decoder_dim: int = 16
    decoder_upsample_channels: int = 2
    stem_channels: int = 8
    stem_gain: float = 16.0
    # initial output probabilities; forged and boundary pixels are rare
    forgery_prior: float = 0.05
    boundary_prior: float = 0.02
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4:
            raise ValueError(f"widths must list four stage widths, got {self.widths}")
        if self.patch_size < 1 or any(w < 1 for w in self.widths):
            raise ValueError("patch_size and widths must be positive")
        if any(w % self.heads for w in self.widths):
            raise ValueError(f"every width must be divisible by heads={self.heads}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if not (0 < self.forgery_prior < 1 and 0 < self.boundary_prior < 1):
            raise ValueError("forgery_prior and boundary_prior must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class PredictionMaps:
    forgery_prob: Tensor  # N x H x W in [0, 1]
    boundary_prob: Tensor  # N x H x W in [0, 1]
    reconstruction: Tensor  # N x 3 x H x W
    extras: dict = field(default_factory=dict)


class Decoder(Module):
    """Per-level 1x1 projection, nearest upsampling to the finest token grid,
    concatenation, a 3x3 conv on the grid, a pixel-shuffle to full
    resolution and a second 3x3 conv (optionally seeing pixel-level features).
    """

    def __init__(self, rng, widths, dim: int, patch: int, up_channels: int, out_channels: int,
                 skip_channels: int = 0, dtype=np.float64):
        self.proj = [param(rng, (w, dim), fan_in=w, dtype=dtype) for w in widths]
        self.proj_bias = [param(rng, (dim,), value=0.0, dtype=dtype) for _ in widths]
        self.conv1 = Conv2d(rng, len(widths) * dim, dim, 3, dtype=dtype)
        self.to_pixels = param(rng, (dim, up_channels * patch * patch), fan_in=dim, dtype=dtype)
        self.conv2 = Conv2d(rng, up_channels + skip_channels, out_channels, 3, dtype=dtype)
        self._patch = patch

    def __call__(self, feats, grids, skip=None):
        fine = grids[0]
        levels = []
        for f, g, w, b in zip(feats, grids, self.proj, self.proj_bias):
            t = ops.linear(f, w, b)
            if tuple(g) != tuple(fine):
                t = ops.matmul(unpool_matrix(tuple(fine), tuple(g)).astype(t.dtype), t)
            levels.append(t)
        x = tokens_to_map(ops.concat(levels, axis=2), fine)
        x = ops.gelu(self.conv1(x))
        t = ops.linear(map_to_tokens(x), self.to_pixels)
        x = ops.pixel_shuffle(tokens_to_map(t, fine), self._patch)
        if skip is not None:
            x = ops.concat([x, skip], axis=1)
        return self.conv2(x)


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


class TwoStreamModel(Module):
    def __init__(self, config: ModelConfig | None = None):
        cfg = config or ModelConfig()
        self._config = cfg
        dt = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        w = cfg.widths
        p = cfg.patch_size
        s = cfg.stem_channels

        self.patch_embed = Conv2d(rng, 3, w[0], p, dtype=dt)
        self.stem = PdcHead(rng, 3, s, dtype=dt)
        self.stem_embed = Conv2d(rng, s, w[0], p, bias=False, dtype=dt)

        self.local_blocks = [SelfAttentionBlock(rng, c, heads=cfg.heads, mlp_ratio=cfg.mlp_ratio, dtype=dt) for c in w]
        self.pdc_heads = [PdcHead(rng, c, c, dtype=dt) for c in w]
        self.local_down = [param(rng, (a, b), fan_in=a, dtype=dt) for a, b in zip(w[:-1], w[1:])]

        self.global_encoder = GlobalEncoder(rng, w, heads=cfg.heads, mlp_ratio=cfg.mlp_ratio, dtype=dt)
        self.fusions = [LwmModule(rng, c, c, c, dtype=dt) for c in w]

        dd, up = cfg.decoder_dim, cfg.decoder_upsample_channels
        self.forgery_decoder = Decoder(rng, w, dd, p, up, 1, skip_channels=s, dtype=dt)
        self.boundary_decoder = Decoder(rng, w, dd, p, up, 1, skip_channels=s, dtype=dt)
        self.image_decoder = Decoder(rng, w, dd, p, up + 2, 3, dtype=dt)
        self.forgery_decoder.conv2.bias.data[:] = _logit(cfg.forgery_prior)
        self.boundary_decoder.conv2.bias.data[:] = _logit(cfg.boundary_prior)

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def dtype(self):
        return np.dtype(self._config.dtype)

    def __call__(self, image):
        return model_forward(image, self)


def check_input_size(h: int, w: int, patch: int) -> None:
    if h % patch or w % patch:
        raise ShapeError(f"input {h}x{w}: height and width must be multiples of the patch size {patch}")
    if h < 4 * patch or w < 4 * patch:
        raise ShapeError(f"input {h}x{w}: height and width must be at least 4 x patch size = {4 * patch}")


def model_forward(image, model: TwoStreamModel, return_features: bool = False) -> PredictionMaps:
    """Run both streams and all three decoders on a 3 x H x W image or N x 3 x H x W batch."""
    cfg = model.config
    x = image.data if isinstance(image, Tensor) else np.asarray(image)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"model_forward: expected 3 x H x W or N x 3 x H x W, got {x.shape}")
    n, _, H, W = x.shape
    p = cfg.patch_size
    check_input_size(H, W, p)
    x = Tensor(np.ascontiguousarray(x, dtype=model.dtype))

    grid = (H // p, W // p)
    grids = stage_grids(grid, 4)

    embed = model.patch_embed(ops.sub(x, 0.5), stride=p, padding=0)
    stem = ops.gelu(pdc_head_forward(ops.scale(x, cfg.stem_gain), model.stem))
    local = ops.add(embed, model.stem_embed(stem, stride=p, padding=0))

    # local stream
    z = map_to_tokens(local)
    f_local = []
    for s in range(4):
        if s > 0:
            z, _ = merge_tokens(z, grids[s - 1])
            z = ops.linear(z, model.local_down[s - 1])
        z = model.local_blocks[s](z)
        fl = pdc_head_forward(tokens_to_map(z, grids[s]), model.pdc_heads[s])
        f_local.append(fl)
        z = ops.add(z, map_to_tokens(fl))

    # global stream
    f_global = global_encoder_forward(map_to_tokens(embed), model.global_encoder, grid=grid)

    fused = []
    for s in range(4):
        fg = tokens_to_map(f_global[s], grids[s])
        fused.append(map_to_tokens(lwm_fuse(f_local[s], fg, model.fusions[s])))

    forgery = ops.sigmoid(model.forgery_decoder(fused, grids, skip=stem))
    boundary = ops.sigmoid(model.boundary_decoder(fused, grids, skip=stem))
    recon = model.image_decoder(f_global, grids)

    extras = {}
    if return_features:
        extras = {"f_local": f_local, "f_global": f_global, "fused": fused, "grids": grids}
    return PredictionMaps(
        forgery_prob=ops.reshape(forgery, (n, H, W)),
        boundary_prob=ops.reshape(boundary, (n, H, W)),
        reconstruction=ops.add(recon, 0.5),
        extras=extras,
    )
