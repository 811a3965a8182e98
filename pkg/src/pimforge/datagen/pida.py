"""Pixel-inconsistency self-blending augmentation.

A pristine image is perturbed (blur, noise or simulated JPEG), and the
perturbed copy is blended back into the original under a foreground mask.
The result is semantically identical to the original; only pixel statistics
inside the mask differ.
"""
from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter, label

from .synth import ForgeryError, ForgerySample, blend, boundary_from_mask, quantize8

JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def on_8bit_grid(img: np.ndarray) -> bool:
    scaled = np.asarray(img, dtype=np.float64) * 255.0
    return bool(np.all(scaled == np.round(scaled)))


def jpeg_table(quality: int) -> np.ndarray:
    q = int(np.clip(quality, 1, 100))
    s = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    return np.maximum(np.floor((JPEG_LUMA * s + 50.0) / 100.0), 1.0)


def jpeg_simulate(img: np.ndarray, quality: int = 75) -> np.ndarray:
    """8x8 blockwise DCT quantisation of every channel with the scaled luminance table."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ph, pw = -h % 8, -w % 8
    x = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge") * 255.0 - 128.0
    H, W, C = x.shape
    blocks = x.reshape(H // 8, 8, W // 8, 8, C).transpose(0, 2, 4, 1, 3)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    table = jpeg_table(quality)
    coef = np.round(coef / table) * table
    back = idctn(coef, axes=(-2, -1), norm="ortho")
    out = back.transpose(0, 3, 1, 4, 2).reshape(H, W, C)
    return np.clip((out[:h, :w] + 128.0) / 255.0, 0.0, 1.0)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(np.asarray(img, dtype=np.float64), sigma=(sigma, sigma, 0), mode="reflect")


def perturb_image(img: np.ndarray, spec: dict, rng: np.random.Generator) -> np.ndarray:
    """Apply ``{"kind": "blur"|"noise"|"jpeg"|"identity", ...}`` to an H x W x 3 image."""
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return np.array(img, dtype=np.float64, copy=True)
    if kind == "blur":
        return gaussian_blur(img, float(spec.get("sigma", 1.0)))
    if kind == "noise":
        sigma = float(spec.get("sigma", 0.05))
        return np.clip(img + rng.normal(0.0, sigma, size=np.shape(img)), 0.0, 1.0)
    if kind == "jpeg":
        return jpeg_simulate(img, int(spec.get("quality", 75)))
    raise ValueError(f"unknown perturbation kind {kind!r}")


def random_perturbation(rng: np.random.Generator) -> dict:
    kind = ("blur", "noise", "jpeg")[int(rng.integers(3))]
    if kind == "blur":
        return {"kind": kind, "sigma": float(rng.uniform(0.5, 1.5))}
    if kind == "noise":
        return {"kind": kind, "sigma": float(rng.uniform(0.01, 0.05))}
    return {"kind": kind, "quality": int(rng.integers(50, 96))}


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    hist, edges = np.histogram(values, bins=bins, range=(0.0, 1.0))
    p = hist.astype(np.float64) / max(hist.sum(), 1)
    centres = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(p)
    mu = np.cumsum(p * centres)
    mu_t = mu[-1]
    denom = w0 * (1.0 - w0)
    between = np.where(denom > 0, (mu_t * w0 - mu) ** 2 / np.where(denom > 0, denom, 1), 0.0)
    # class 0 holds bins 0..i, so the split sits on the upper edge of bin i
    return float(edges[int(np.argmax(between)) + 1])


def foreground_mask(img: np.ndarray) -> np.ndarray:
    """Luminance Otsu split, then the largest connected component of the brighter class."""
    img = np.asarray(img, dtype=np.float64)
    lum = img @ np.array([0.299, 0.587, 0.114])
    fg = lum > otsu_threshold(lum)
    labels, n = label(fg)
    if n == 0:
        return np.zeros(lum.shape, dtype=np.uint8)
    sizes = np.bincount(labels.ravel())[1:]
    return (labels == 1 + int(np.argmax(sizes))).astype(np.uint8)


def pida_generate(pristine: np.ndarray, perturb_spec: dict | None, mask_source=None, rng_seed=None,
                  perturbed_is_donor: bool = True, attempts: int = 5) -> ForgerySample:
    """Self-blend a perturbed copy of ``pristine`` into itself.

    ``mask_source`` is a mask array, a callable ``(image, rng) -> mask``, or
    None for the luminance-Otsu foreground proxy.
    """
    rng = np.random.default_rng(rng_seed)
    ip = np.asarray(pristine, dtype=np.float64)
    spec = perturb_spec if perturb_spec is not None else random_perturbation(rng)

    mask = None
    for _ in range(attempts):
        if mask_source is None:
            cand = foreground_mask(ip)
        elif callable(mask_source):
            cand = np.asarray(mask_source(ip, rng))
        else:
            cand = np.asarray(mask_source)
        if cand.shape != ip.shape[:2]:
            raise ForgeryError(f"pida: mask {cand.shape} vs image {ip.shape[:2]}")
        if cand.any():
            mask = cand.astype(np.uint8)
            break
        if not callable(mask_source):
            break
    if mask is None:
        raise ForgeryError(f"pida: mask source produced an empty mask after {attempts} attempts")

    ic = perturb_image(ip, spec, rng)
    if on_8bit_grid(ip):
        ic = quantize8(ic)
    ib = blend(ic, ip, mask) if perturbed_is_donor else blend(ip, ic, mask)
    if not perturbed_is_donor:
        mask = (1 - mask).astype(np.uint8)
    return ForgerySample(ib, mask, boundary_from_mask(mask), "pida-blend", {"perturbation": spec})
