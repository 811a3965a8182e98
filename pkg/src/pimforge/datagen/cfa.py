"""Bayer mosaicing and bilinear demosaicing.

Raw samples are quantised to 64 levels (multiples of 4/255). Bilinear
interpolation then only ever divides sums of 2 or 4 such samples by 2 or 4,
so every demosaiced value is an exact multiple of 1/255: the pristine
correlation structure survives an 8-bit PNG round trip bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64)
_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)
_CROSS = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)


@dataclass(frozen=True)
class CfaPattern:
    """RGGB Bayer tile shifted by ``(dx, dy)``."""

    dx: int = 0
    dy: int = 0

    def __post_init__(self):
        if self.dx not in (0, 1) or self.dy not in (0, 1):
            raise ValueError(f"CfaPattern: phase offset must be in {{0,1}}^2, got ({self.dx}, {self.dy})")

    @property
    def green_parity(self) -> int:
        return (self.dx + self.dy) % 2

    def tile(self) -> np.ndarray:
        """2x2 array of channel indices (0=R, 1=G, 2=B) at the top-left corner."""
        base = np.array([[0, 1], [1, 2]])
        return np.roll(np.roll(base, -self.dy, axis=0), -self.dx, axis=1)

    def site_masks(self, h: int, w: int) -> np.ndarray:
        """(3, h, w) boolean masks of R, G, B sample sites."""
        ys = (np.arange(h)[:, None] + self.dy) % 2
        xs = (np.arange(w)[None, :] + self.dx) % 2
        code = np.array([[0, 1], [1, 2]])[ys, xs]
        return np.stack([code == c for c in range(3)])


def mosaic(img: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    """Sample one channel per pixel from an H x W x 3 image."""
    sites = pattern.site_masks(*img.shape[:2])
    return np.einsum("chw,hwc->hw", sites.astype(img.dtype), img)


def demosaic_counts(raw: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    """Bilinear demosaic of a raw mosaic in integer counts; mirror borders keep the lattice."""
    sites = pattern.site_masks(*raw.shape).astype(np.float64)
    out = np.empty(raw.shape + (3,), dtype=np.float64)
    out[..., 0] = convolve(raw * sites[0], _K_RB, mode="mirror") / 4.0
    out[..., 1] = convolve(raw * sites[1], _K_GREEN, mode="mirror") / 4.0
    out[..., 2] = convolve(raw * sites[2], _K_RB, mode="mirror") / 4.0
    return out


def mosaic_and_demosaic(img: np.ndarray, pattern: CfaPattern, quantize: bool = True) -> np.ndarray:
    """Simulate a camera: subsample per Bayer site, then bilinear interpolation.

    ``img`` is H x W x 3 in [0, 1] with even H and W.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"mosaic_and_demosaic: expected H x W x 3, got {img.shape}")
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic_and_demosaic: dimensions must be even, got {h}x{w}")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("mosaic_and_demosaic: values must lie in [0, 1]")
    raw = mosaic(img, pattern)
    if quantize:
        counts = np.floor(raw * 63.0 + 0.5) * 4.0
        return demosaic_counts(counts, pattern) / 255.0
    return demosaic_counts(raw, pattern)


def green_residual(img: np.ndarray, pattern: CfaPattern) -> tuple[np.ndarray, np.ndarray]:
    """Residual ``G - mean(4 green neighbours)`` and the mask of interpolated green sites.

    Pristine bilinear output has zero residual at every interpolated site.
    """
    g = np.asarray(img, dtype=np.float64)[..., 1]
    sites = ~pattern.site_masks(*g.shape)[1]
    counts = g * 255.0
    if np.all(counts == np.round(counts)):
        # integer arithmetic on the 8-bit grid, so a pristine residual is exactly zero
        c = np.round(counts).astype(np.int64)
        res = (4 * c - convolve(c, _CROSS.astype(np.int64), mode="mirror")) / (4.0 * 255.0)
    else:
        res = g - convolve(g, _CROSS, mode="mirror") / 4.0
    return np.where(sites, res, 0.0), sites


def violation_fraction(img: np.ndarray, pattern: CfaPattern, region: np.ndarray | None = None,
                       tol: float = 1e-9) -> float:
    """Fraction of interpolated green sites (inside ``region``) whose residual exceeds ``tol``."""
    res, sites = green_residual(img, pattern)
    sel = sites if region is None else sites & region.astype(bool)
    if not sel.any():
        return 0.0
    return float((np.abs(res[sel]) > tol).mean())
