"""Training objective: mask CE + boundary CE + compactness + reconstruction."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import PredictionMaps
from .tensor import ShapeError, Tensor
from .tensor import ops


@dataclass
class LossWeights:
    lambda_b: float = 1.0
    lambda_c: float = 0.1
    lambda_r: float = 1.0
    epsilon: float = 1e-6
    recon_per_pixel: bool = True
    ce_clip: float = 1e-7

    def __post_init__(self):
        if min(self.lambda_b, self.lambda_c, self.lambda_r) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _batched(t, ndim: int):
    t = t if isinstance(t, Tensor) else Tensor(t)
    return ops.reshape(t, (1,) + t.shape) if t.ndim == ndim - 1 else t


def compactness_loss(b_hat, m_hat, eps: float = 1e-6):
    """Batch mean of ``P^2 / (4 pi A)`` with ``P = sum B_hat`` and ``A = sum M_hat + eps``."""
    b = _batched(b_hat, 3)
    m = _batched(m_hat, 3)
    if b.shape != m.shape or b.ndim != 3:
        raise ShapeError(f"compactness_loss: boundary {b.shape} vs mask {m.shape}")
    perim = ops.sum(b, axis=(1, 2))
    area = ops.add(ops.sum(m, axis=(1, 2)), eps)
    ratio = ops.div(ops.mul(perim, perim), ops.scale(area, 4.0 * math.pi))
    return ops.mean(ratio)


def reconstruction_loss(recon, image, per_pixel: bool = False):
    """Batch mean of per-image L1 norms; ``per_pixel`` divides by elements per image."""
    r = _batched(recon, 4)
    i = _batched(image, 4)
    if r.shape != i.shape:
        raise ShapeError(f"reconstruction_loss: reconstruction {r.shape} vs image {i.shape}")
    n = r.shape[0]
    total = ops.l1_distance(r, i, reduction="sum")
    denom = n * (int(np.prod(r.shape[1:])) if per_pixel else 1)
    return ops.scale(total, 1.0 / denom)


def _binary(name: str, arr: np.ndarray) -> None:
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"total_loss: {name} labels must be binary")


def total_loss(preds: PredictionMaps, labels: dict, w: LossWeights):
    """``L = L_M + lambda_B L_B + lambda_C L_C + lambda_R L_R``.

    ``labels`` holds ``mask`` and ``boundary`` (N x H x W, binary) and
    ``image`` (N x 3 x H x W). Returns the scalar and the four components.
    """
    dt = preds.forgery_prob.dtype
    mask = np.asarray(labels["mask"], dtype=dt).reshape(preds.forgery_prob.shape)
    bound = np.asarray(labels["boundary"], dtype=dt).reshape(preds.boundary_prob.shape)
    _binary("mask", mask)
    _binary("boundary", bound)
    image = np.asarray(labels["image"], dtype=dt).reshape(preds.reconstruction.shape)

    l_m = ops.binary_cross_entropy(preds.forgery_prob, Tensor(mask), clip=w.ce_clip)
    l_b = ops.binary_cross_entropy(preds.boundary_prob, Tensor(bound), clip=w.ce_clip)
    l_c = compactness_loss(preds.boundary_prob, preds.forgery_prob, w.epsilon)
    l_r = reconstruction_loss(preds.reconstruction, Tensor(image), per_pixel=w.recon_per_pixel)
    total = ops.weighted_sum([l_m, l_b, l_c, l_r], [1.0, w.lambda_b, w.lambda_c, w.lambda_r])
    comps = {"L_M": l_m, "L_B": l_b, "L_C": l_c, "L_R": l_r}
    return total, comps


def combine(components: dict, w: LossWeights) -> float:
    """Plain-float version of the weighted sum (for logging and checks)."""
    return (components["L_M"] + w.lambda_b * components["L_B"]
            + w.lambda_c * components["L_C"] + w.lambda_r * components["L_R"])
