"""Regular data augmentation applied to training samples."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .pida import gaussian_blur, jpeg_simulate
from .synth import (PRISTINE, ForgerySample, _placement, blend, boundary_from_mask, quantize8,
                    region_mask, shift_image, shift_mask)

RDA_OPS = ("flip", "blur", "jpeg", "noise", "paste")


def horizontal_flip(sample: ForgerySample) -> ForgerySample:
    """Mirror image and labels left-right; an involution, metadata included."""
    meta = dict(sample.meta)
    if not meta.pop("flipped", False):
        meta["flipped"] = True
    return replace(sample,
                   image=sample.image[:, ::-1].copy(),
                   mask=sample.mask[:, ::-1].copy(),
                   boundary=sample.boundary[:, ::-1].copy(),
                   meta=meta)


def paste_object(sample: ForgerySample, rng: np.random.Generator, area_range=(0.01, 0.1)) -> ForgerySample:
    """Clone a random region of the image onto a shifted location and mark it forged."""
    h, w = sample.mask.shape
    src = region_mask(rng, h, w, area_range)
    dy, dx = 0, 0
    while (dy, dx) == (0, 0):
        dy, dx = _placement(rng, src)
    dst = shift_mask(src, dy, dx)
    image = blend(shift_image(sample.image, dy, dx), sample.image, dst)
    mask = (sample.mask.astype(bool) | dst).astype(np.uint8)
    kind = sample.manip_type if sample.manip_type != PRISTINE else "copy-move"
    return ForgerySample(image, mask, boundary_from_mask(mask), kind,
                         {**sample.meta, "pasted_shift": [dy, dx]})


def rda_apply(sample: ForgerySample, rng_seed, ops=None, p: float = 0.5) -> ForgerySample:
    """Apply each op in ``ops`` (default: a random subset, each with probability ``p``).

    Photometric ops leave the labels alone; flip and paste update them.
    """
    rng = np.random.default_rng(rng_seed)
    if ops is None:
        ops = [op for op in RDA_OPS if rng.random() < p]
    out = sample
    for op in ops:
        if op == "flip":
            out = horizontal_flip(out)
        elif op == "blur":
            out = replace(out, image=gaussian_blur(out.image, float(rng.uniform(0.3, 1.0))))
        elif op == "jpeg":
            out = replace(out, image=jpeg_simulate(out.image, int(rng.integers(60, 96))))
        elif op == "noise":
            sigma = float(rng.uniform(0.005, 0.03))
            out = replace(out, image=np.clip(out.image + rng.normal(0.0, sigma, out.image.shape), 0.0, 1.0))
        elif op == "paste":
            out = paste_object(out, rng)
        else:
            raise ValueError(f"unknown augmentation {op!r}")
    if out is not sample and any(op in ("blur", "jpeg", "noise") for op in ops):
        out = replace(out, image=quantize8(out.image))
    return out
