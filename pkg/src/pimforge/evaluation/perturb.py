"""Image corruptions at fixed severity levels 0..9 (0 is the identity)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("brightness", "contrast", "darkening", "dithering", "pink_noise", "jpeg2000_like")
SEVERITIES = tuple(range(10))
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}; expected one of {KINDS}")
        if not (isinstance(self.severity, (int, np.integer)) and 0 <= self.severity <= 9):
            raise ValueError(f"severity must be an integer in 0..9, got {self.severity!r}")


def severity_parameter(kind: str, s: int) -> float:
    """The table value for ``kind`` at severity ``s >= 1``."""
    return {
        "brightness": 0.05 * s,
        "contrast": 1.0 + 0.1 * s,
        "darkening": 1.0 + 0.2 * s,
        "dithering": float(11 - s),
        "pink_noise": 0.01 * s,
        "jpeg2000_like": 0.004 * 2.0 ** (s / 2.0),
    }[kind]


def floyd_steinberg(img: np.ndarray, levels: int) -> np.ndarray:
    """Error-diffusion quantisation of each channel to ``levels`` evenly spaced values."""
    h, w, c = img.shape
    q = levels - 1
    out = np.empty_like(img)
    for ch in range(c):
        buf = img[..., ch].astype(np.float64).tolist()
        for y in range(h):
            row = buf[y]
            below = buf[y + 1] if y + 1 < h else None
            for x in range(w):
                old = row[x]
                new = min(max(round(old * q), 0), q) / q
                row[x] = new
                err = old - new
                if x + 1 < w:
                    row[x + 1] += err * 7 / 16
                if below is not None:
                    if x > 0:
                        below[x - 1] += err * 3 / 16
                    below[x] += err * 5 / 16
                    if x + 1 < w:
                        below[x + 1] += err * 1 / 16
        out[..., ch] = np.asarray(buf)
    return out


def pink_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with a 1/f amplitude spectrum."""
    h, w = shape
    white = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = np.inf
    noise = np.fft.irfft2(np.fft.rfft2(white) / f, s=(h, w))
    return noise / (noise.std() + 1e-12)


def _haar_fwd(x: np.ndarray):
    a = (x[0::2] + x[1::2]) / np.sqrt(2)
    d = (x[0::2] - x[1::2]) / np.sqrt(2)
    return a, d


def _haar_inv(a: np.ndarray, d: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0] * 2,) + a.shape[1:])
    out[0::2] = (a + d) / np.sqrt(2)
    out[1::2] = (a - d) / np.sqrt(2)
    return out


def wavelet_quantize(img: np.ndarray, step: float, levels: int = 3) -> np.ndarray:
    """Orthonormal separable Haar transform, uniform quantisation of every subband, inverse."""
    h, w = img.shape[:2]
    m = 2 ** levels
    x = np.pad(img, ((0, -h % m), (0, -w % m), (0, 0)), mode="edge").astype(np.float64)
    details = []
    for _ in range(levels):
        lo, hi = _haar_fwd(x)
        ll, lh = _haar_fwd(lo.swapaxes(0, 1))
        hl, hh = _haar_fwd(hi.swapaxes(0, 1))
        details.append((lh, hl, hh))
        x = ll.swapaxes(0, 1)
    quant = lambda c: np.round(c / step) * step  # noqa: E731
    x = quant(x)
    for lh, hl, hh in reversed(details):
        lo = _haar_inv(x.swapaxes(0, 1), quant(lh)).swapaxes(0, 1)
        hi = _haar_inv(quant(hl), quant(hh)).swapaxes(0, 1)
        x = _haar_inv(lo, hi)
    return x[:h, :w]


def apply_perturbation(image: np.ndarray, spec: PerturbationSpec, rng_seed=0) -> np.ndarray:
    """Corrupt an H x W x 3 image in [0, 1]; severity 0 returns an unchanged copy."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {img.shape}")
    if spec.severity == 0:
        return img.copy()
    v = severity_parameter(spec.kind, spec.severity)
    if spec.kind == "brightness":
        out = img + v
    elif spec.kind == "contrast":
        mean = img.mean()
        out = (img - mean) * v + mean
    elif spec.kind == "darkening":
        out = img ** v
    elif spec.kind == "dithering":
        out = floyd_steinberg(img, int(v))
    elif spec.kind == "pink_noise":
        rng = np.random.default_rng(rng_seed)
        out = img + v * pink_noise(img.shape[:2], rng)[..., None]
    else:
        out = wavelet_quantize(img, v)
    return np.clip(out, 0.0, 1.0)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)
