"""Raster-scan masked self-attention and the global pixel-dependency encoder.

Tokens are enumerated row-major over the patch grid. Token ``m`` only ever
sees tokens ``n < m``; the first token has an empty context and produces a
zero attention output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .nn import LayerNorm, Mlp, Module, param
from .tensor import ShapeError, Tensor
from .tensor import ops


@dataclass(frozen=True)
class RasterMask:
    n_tokens: int
    allow: np.ndarray  # allow[m, n] is True iff n < m

    def __post_init__(self):
        if self.allow.shape != (self.n_tokens, self.n_tokens):
            raise ShapeError(f"RasterMask: allow has shape {self.allow.shape} for {self.n_tokens} tokens")


@lru_cache(maxsize=64)
def _tril(n: int) -> np.ndarray:
    a = np.tril(np.ones((n, n), dtype=bool), k=-1)
    a.setflags(write=False)
    return a


def build_raster_mask(n_tokens: int) -> RasterMask:
    if n_tokens < 1:
        raise ValueError(f"build_raster_mask: need at least one token, got {n_tokens}")
    return RasterMask(int(n_tokens), _tril(int(n_tokens)))


def _split_heads(x, heads: int):
    n, L, d = x.shape
    return ops.transpose(ops.reshape(x, (n, L, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    n, h, L, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (n, L, h * dh))


def attention(z, w_query, w_key, w_value, heads: int = 1, mask: np.ndarray | None = None):
    """Scaled dot-product attention over (N, L, C) tokens, no output projection."""
    q = _split_heads(ops.linear(z, w_query), heads)
    k = _split_heads(ops.linear(z, w_key), heads)
    v = _split_heads(ops.linear(z, w_value), heads)
    # temperature uses the full key dimension, also when split into heads
    d = w_query.shape[1]
    logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    p = ops.softmax(logits, mask=mask)
    return _merge_heads(ops.matmul(p, v))


class MaskedAttentionBlock(Module):
    """Masked attention followed by a token-wise MLP.

    There is deliberately no residual from a token to its own output: that
    would leak token ``m`` into output ``m`` and break strict causality.
    """

    def __init__(self, rng, dim: int, key_dim: int | None = None, heads: int = 1,
                 mlp_ratio: int = 2, dtype=np.float64):
        d = key_dim or dim
        if d % heads:
            raise ValueError(f"key dim {d} not divisible by {heads} heads")
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.w_query = param(rng, (dim, d), fan_in=dim, dtype=dtype)
        self.w_key = param(rng, (dim, d), fan_in=dim, dtype=dtype)
        self.w_value = param(rng, (dim, d), fan_in=dim, dtype=dtype)
        self.w_out = param(rng, (d, dim), fan_in=d, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(rng, dim, mlp_ratio * dim, dtype=dtype)
        self._heads = heads
        self._d = d

    @property
    def heads(self) -> int:
        return self._heads

    @property
    def key_dim(self) -> int:
        return self._d

    def __call__(self, z, mask: RasterMask):
        a = ops.linear(masked_attention_forward(self.norm1(z), self, mask), self.w_out)
        return ops.add(a, self.mlp(self.norm2(a)))


def masked_attention_forward(z, block: MaskedAttentionBlock, mask: RasterMask):
    """Row ``m`` of the result is ``sum_{n<m} p_mn * value(z_n)``.

    Accepts (n_tokens, C) or batched (N, n_tokens, C) input.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    squeeze = z.ndim == 2
    if squeeze:
        z = ops.reshape(z, (1,) + z.shape)
    if z.ndim != 3:
        raise ShapeError(f"masked_attention_forward: expected (N, L, C) tokens, got {z.shape}")
    if z.shape[1] != mask.n_tokens:
        raise ShapeError(f"masked_attention_forward: {z.shape[1]} tokens vs mask for {mask.n_tokens}")
    if z.shape[2] != block.w_query.shape[0]:
        raise ShapeError(f"masked_attention_forward: token dim {z.shape[2]} vs projection {block.w_query.shape}")
    out = attention(z, block.w_query, block.w_key, block.w_value, block.heads, mask.allow)
    return ops.reshape(out, out.shape[1:]) if squeeze else out


class SelfAttentionBlock(Module):
    """Plain pre-norm transformer block (unmasked) for the local stream."""

    def __init__(self, rng, dim: int, heads: int = 1, mlp_ratio: int = 2, dtype=np.float64):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.w_query = param(rng, (dim, dim), fan_in=dim, dtype=dtype)
        self.w_key = param(rng, (dim, dim), fan_in=dim, dtype=dtype)
        self.w_value = param(rng, (dim, dim), fan_in=dim, dtype=dtype)
        self.w_out = param(rng, (dim, dim), fan_in=dim, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(rng, dim, mlp_ratio * dim, dtype=dtype)
        self._heads = heads

    def __call__(self, z):
        a = attention(self.norm1(z), self.w_query, self.w_key, self.w_value, self._heads)
        z = ops.add(z, ops.linear(a, self.w_out))
        return ops.add(z, self.mlp(self.norm2(z)))


# patch-grid plumbing ------------------------------------------------------------

def merged_grid(grid: tuple[int, int]) -> tuple[int, int]:
    return (grid[0] + 1) // 2, (grid[1] + 1) // 2


@lru_cache(maxsize=64)
def merge_matrix(grid: tuple[int, int]) -> np.ndarray:
    """(h'w', hw) matrix averaging each 2x2 cell of a row-major token grid.

    Odd extents merge in ceil mode, averaging only the cells that exist.
    """
    h, w = grid
    h2, w2 = merged_grid(grid)
    P = np.zeros((h2 * w2, h * w))
    for r in range(h):
        for c in range(w):
            P[(r // 2) * w2 + c // 2, r * w + c] = 1.0
    P /= P.sum(axis=1, keepdims=True)
    P.setflags(write=False)
    return P


@lru_cache(maxsize=64)
def unpool_matrix(fine: tuple[int, int], coarse: tuple[int, int]) -> np.ndarray:
    """(hw_fine, hw_coarse) nearest-neighbour map from a coarse grid to a finer one."""
    hf, wf = fine
    hc, wc = coarse
    fy, fx = -(-hf // hc), -(-wf // wc)
    U = np.zeros((hf * wf, hc * wc))
    for r in range(hf):
        for c in range(wf):
            U[r * wf + c, (r // fy) * wc + c // fx] = 1.0
    U.setflags(write=False)
    return U


def merge_tokens(tokens, grid: tuple[int, int]):
    P = merge_matrix(tuple(grid)).astype(tokens.dtype)
    return ops.matmul(P, tokens), merged_grid(grid)


def stage_grids(grid: tuple[int, int], n_stages: int = 4) -> list[tuple[int, int]]:
    out = [tuple(grid)]
    for _ in range(n_stages - 1):
        out.append(merged_grid(out[-1]))
    return out


class GlobalEncoder(Module):
    """Four masked-attention stages with 2x2 token merging between them."""

    def __init__(self, rng, widths: Sequence[int], heads: int = 1, mlp_ratio: int = 2, dtype=np.float64):
        self.blocks = [MaskedAttentionBlock(rng, w, heads=heads, mlp_ratio=mlp_ratio, dtype=dtype) for w in widths]
        self.down = [param(rng, (a, b), fan_in=a, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        self._widths = tuple(widths)


def global_encoder_forward(patch_tokens, encoder: GlobalEncoder, grid: tuple[int, int] | None = None):
    """Return ``[f_g1, .., f_g4]`` as (N, n_s, C_s) token tensors.

    Without an explicit ``grid`` the token count must be a perfect square.
    """
    z = patch_tokens if isinstance(patch_tokens, Tensor) else Tensor(patch_tokens)
    if z.ndim == 2:
        z = ops.reshape(z, (1,) + z.shape)
    n = z.shape[1]
    if grid is None:
        side = math.isqrt(n)
        if side * side != n:
            raise ShapeError(f"global_encoder_forward: {n} tokens is not a perfect square")
        grid = (side, side)
    elif grid[0] * grid[1] != n:
        raise ShapeError(f"global_encoder_forward: grid {grid} does not hold {n} tokens")
    feats = []
    for s, block in enumerate(encoder.blocks):
        if s > 0:
            z, grid = merge_tokens(feats[-1], grid)
            z = ops.linear(z, encoder.down[s - 1])
        feats.append(block(z, build_raster_mask(z.shape[1])))
    return feats
