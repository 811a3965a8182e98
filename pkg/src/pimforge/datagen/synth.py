"""Procedural pristine images and splice / copy-move / inpaint forgeries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion, gaussian_filter

from .cfa import CfaPattern, mosaic_and_demosaic

MANIP_TYPES = ("splice", "copy-move", "inpaint", "pida-blend")
PRISTINE = "pristine"


class ForgeryError(ValueError):
    pass


@dataclass
class ForgerySample:
    image: np.ndarray  # H x W x 3 float64 in [0, 1]
    mask: np.ndarray  # H x W uint8 {0, 1}
    boundary: np.ndarray  # H x W uint8 {0, 1}
    manip_type: str
    meta: dict = field(default_factory=dict)

    @property
    def is_forged(self) -> bool:
        return self.manip_type != PRISTINE

    def validate(self) -> None:
        if self.image.min() < 0 or self.image.max() > 1:
            raise ForgeryError("image values outside [0, 1]")
        if self.mask.shape != self.image.shape[:2] or self.boundary.shape != self.mask.shape:
            raise ForgeryError("label shapes do not match the image")
        if self.is_forged and not self.mask.any():
            raise ForgeryError(f"{self.manip_type} sample has an empty mask")
        if not self.is_forged and self.mask.any():
            raise ForgeryError("pristine sample has a nonzero mask")
        if not np.array_equal(self.boundary, boundary_from_mask(self.mask)):
            raise ForgeryError("boundary is not derived from the mask")


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid (half up) so PNG storage is lossless."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def procedural_image(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth colour gradient + random soft blobs + texture noise, H x W x 3 in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    base = rng.uniform(0.2, 0.8, size=3)
    gy, gx = rng.uniform(-0.3, 0.3, size=(2, 3))
    img = base + yy[..., None] * gy + xx[..., None] * gx
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(0.08, 0.3, size=2) * np.array([h, w])
        colour = rng.uniform(-0.4, 0.4, size=3)
        blob = np.exp(-(((np.arange(h)[:, None] - cy) / ry) ** 2 + ((np.arange(w)[None, :] - cx) / rx) ** 2))
        img = img + blob[..., None] * colour
    amp = rng.uniform(0.02, 0.08)
    tex = gaussian_filter(rng.normal(size=(h, w, 3)), sigma=(rng.uniform(0.5, 1.5),) * 2 + (0,))
    tex /= tex.std() + 1e-12
    img = img + amp * tex
    return np.clip(img, 0.0, 1.0)


def random_pattern(rng: np.random.Generator) -> CfaPattern:
    return CfaPattern(int(rng.integers(2)), int(rng.integers(2)))


def pristine_image(rng: np.random.Generator, h: int, w: int, pattern: CfaPattern | None = None):
    pattern = pattern or random_pattern(rng)
    return mosaic_and_demosaic(procedural_image(rng, h, w), pattern), pattern


def blend(donor: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``mask * donor + (1 - mask) * target`` with the mask broadcast over channels."""
    donor = np.asarray(donor)
    target = np.asarray(target)
    if donor.shape != target.shape:
        raise ValueError(f"blend: donor {donor.shape} vs target {target.shape}")
    m = np.asarray(mask).astype(bool)
    if m.shape != donor.shape[:2]:
        raise ValueError(f"blend: mask {m.shape} vs image {donor.shape}")
    if donor.ndim == 3:
        m = m[..., None]
    return np.where(m, donor, target)


def boundary_from_mask(mask: np.ndarray) -> np.ndarray:
    """Inner boundary: ``M and not erode(M, 3x3)``; the image border erodes away."""
    m = np.asarray(mask).astype(bool)
    inner = binary_erosion(m, structure=np.ones((3, 3), dtype=bool), border_value=0)
    return (m & ~inner).astype(np.uint8)


def region_mask(rng: np.random.Generator, h: int, w: int, area_range=(0.01, 0.25),
                max_tries: int = 100) -> np.ndarray:
    """Random ellipse or rectangle whose area fraction lies in ``area_range``."""
    lo, hi = area_range
    if not 0 < lo <= hi <= 1:
        raise ForgeryError(f"invalid area range {area_range}")
    total = h * w
    for _ in range(max_tries):
        frac = rng.uniform(lo, hi)
        aspect = rng.uniform(0.5, 2.0)
        if rng.random() < 0.5:
            ry = np.sqrt(frac * total / (np.pi * aspect))
            rx = ry * aspect
            if 2 * ry >= h or 2 * rx >= w:
                continue
            cy = rng.uniform(ry, h - ry)
            cx = rng.uniform(rx, w - rx)
            yy, xx = np.mgrid[0:h, 0:w]
            m = ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0
        else:
            rh = int(round(np.sqrt(frac * total / aspect)))
            rw = int(round(rh * aspect))
            if not (1 <= rh < h and 1 <= rw < w):
                continue
            y0 = rng.integers(0, h - rh + 1)
            x0 = rng.integers(0, w - rw + 1)
            m = np.zeros((h, w), dtype=bool)
            m[y0:y0 + rh, x0:x0 + rw] = True
        a = m.mean()
        if lo <= a <= hi:
            return m
    raise ForgeryError(f"could not draw a region with area fraction in {area_range}")


def _bbox(m: np.ndarray):
    ys, xs = np.nonzero(m)
    return ys.min(), ys.max() + 1, xs.min(), xs.max() + 1


def shift_mask(m: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(m)
    h, w = m.shape
    ys, xs = np.nonzero(m)
    ys2, xs2 = ys + dy, xs + dx
    if ys2.min() < 0 or xs2.min() < 0 or ys2.max() >= h or xs2.max() >= w:
        raise ForgeryError("shifted region leaves the image")
    out[ys2, xs2] = True
    return out


def shift_image(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Content at (y, x) moves to (y + dy, x + dx); uncovered pixels are zero."""
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys0 = slice(max(-dy, 0), h + min(-dy, 0))
    xs0 = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = img[ys0, xs0]
    return out


def _placement(rng, m: np.ndarray, even: bool = False):
    """Random shift keeping the region inside the image."""
    h, w = m.shape
    y0, y1, x0, x1 = _bbox(m)
    step = 2 if even else 1
    ys = np.arange(-y0, h - y1 + 1)
    xs = np.arange(-x0, w - x1 + 1)
    ys = ys[ys % step == 0]
    xs = xs[xs % step == 0]
    if ys.size == 0 or xs.size == 0:
        raise ForgeryError("region too large to place")
    return int(rng.choice(ys)), int(rng.choice(xs))


def jacobi_inpaint(img: np.ndarray, hole: np.ndarray, iterations: int = 50) -> np.ndarray:
    """Fill ``hole`` by repeated 4-neighbour averaging with the surroundings held fixed."""
    out = img.astype(np.float64).copy()
    hole = hole.astype(bool)
    ring = binary_erosion(~hole, structure=np.ones((3, 3)), border_value=1) ^ ~hole
    fill = out[ring].mean(axis=0) if ring.any() else out[~hole].mean(axis=0)
    out[hole] = fill
    for _ in range(iterations):
        p = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 4.0
        out[hole] = avg[hole]
    return out


def synth_forgery(donor: np.ndarray, target: np.ndarray, kind: str, rng_seed,
                  area_range=(0.01, 0.25), region: np.ndarray | None = None,
                  max_retries: int = 20, inpaint_iterations: int = 50) -> ForgerySample:
    """Build a splice, copy-move or inpaint forgery of ``target``.

    Splices paste a donor region at an even displacement, so the donor keeps
    its own CFA phase in the composite. Copy-move ignores ``donor``.
    """
    rng = np.random.default_rng(rng_seed)
    target = np.asarray(target, dtype=np.float64)
    h, w = target.shape[:2]
    if region is not None:
        region = np.asarray(region).astype(bool)
        if region.shape != (h, w):
            raise ForgeryError(f"region {region.shape} larger than / unlike image {(h, w)}")
        if not region.any():
            raise ForgeryError("empty region")
    if area_range[1] > 1:
        raise ForgeryError("region larger than image")

    meta: dict = {"kind": kind}
    if kind == "splice":
        donor = np.asarray(donor, dtype=np.float64)
        if donor.shape != target.shape:
            raise ForgeryError(f"donor {donor.shape} vs target {target.shape}")
        src = region if region is not None else region_mask(rng, h, w, area_range)
        dy, dx = _placement(rng, src, even=True)
        m = shift_mask(src, dy, dx)
        image = blend(shift_image(donor, dy, dx), target, m)
        meta["shift"] = [dy, dx]
    elif kind == "copy-move":
        src = region if region is not None else region_mask(rng, h, w, area_range)
        for _ in range(max_retries):
            dy, dx = _placement(rng, src)
            if (dy, dx) == (0, 0):
                continue
            m = shift_mask(src, dy, dx)
            if not (m & src).any():
                break
        else:
            raise ForgeryError(f"copy-move: no non-overlapping placement after {max_retries} retries")
        image = blend(shift_image(target, dy, dx), target, m)
        meta["shift"] = [dy, dx]
    elif kind == "inpaint":
        m = region if region is not None else region_mask(rng, h, w, area_range)
        image = jacobi_inpaint(target, m, inpaint_iterations)
    else:
        raise ForgeryError(f"unknown forgery kind {kind!r}")

    m = m.astype(np.uint8)
    return ForgerySample(quantize8(image), m, boundary_from_mask(m), kind, meta)


def pristine_sample(image: np.ndarray, meta: dict | None = None) -> ForgerySample:
    h, w = image.shape[:2]
    z = np.zeros((h, w), dtype=np.uint8)
    return ForgerySample(np.asarray(image, dtype=np.float64), z, z.copy(), PRISTINE, dict(meta or {}))
