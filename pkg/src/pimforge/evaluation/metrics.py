"""Pixel- and image-level localisation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _binary_gt(gt) -> np.ndarray:
    gt = np.asarray(gt)
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground-truth mask must be binary")
    return gt.astype(bool)


def confusion_counts(pred_prob, gt_mask, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """A pixel is predicted positive iff its probability is strictly above ``threshold``."""
    prob = np.asarray(pred_prob, dtype=np.float64)
    gt = _binary_gt(gt_mask)
    if prob.shape != gt.shape:
        raise ValueError(f"prediction {prob.shape} vs ground truth {gt.shape}")
    pos = prob > threshold
    tp = int(np.count_nonzero(pos & gt))
    fp = int(np.count_nonzero(pos & ~gt))
    fn = int(np.count_nonzero(~pos & gt))
    return ConfusionCounts(tp, fp, gt.size - tp - fp - fn, fn)


def metric_f1(c: ConfusionCounts) -> float:
    den = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / den if den else 0.0


def metric_iou(c: ConfusionCounts) -> float:
    den = c.tp + c.fp + c.fn
    return c.tp / den if den else 0.0


def metric_mcc(c: ConfusionCounts) -> float:
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    num = c.tp * c.tn - c.fp * c.fn
    return num / math.sqrt(math.prod(factors))


def metric_auc(pred_prob, gt_mask) -> float | None:
    """Rank (Mann-Whitney) AUC with ties counted half; None when only one class is present."""
    prob = np.asarray(pred_prob, dtype=np.float64).ravel()
    gt = _binary_gt(gt_mask).ravel()
    if prob.shape != gt.shape:
        raise ValueError(f"prediction {prob.shape} vs ground truth {gt.shape}")
    n_pos = int(gt.sum())
    n_neg = gt.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(prob)
    u = ranks[gt].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def image_level_score(pred_prob) -> float:
    prob = np.asarray(pred_prob)
    if prob.size == 0:
        raise ValueError("empty probability map")
    return float(prob.max())


def pixel_metrics(pred_prob, gt_mask, threshold: float = DEFAULT_THRESHOLD) -> dict:
    c = confusion_counts(pred_prob, gt_mask, threshold)
    return {"f1": metric_f1(c), "mcc": metric_mcc(c), "iou": metric_iou(c), "auc": metric_auc(pred_prob, gt_mask)}
