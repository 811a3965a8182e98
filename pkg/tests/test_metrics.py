import math

import numpy as np
import pytest

from pimforge.evaluation import (ConfusionCounts, confusion_counts, image_level_score, metric_auc, metric_f1,
                                 metric_iou, metric_mcc)
from pimforge.evaluation.metrics import pixel_metrics


def loop_counts(prob, gt, thr):
    tp = fp = tn = fn = 0
    for p, g in zip(np.ravel(prob), np.ravel(gt)):
        pos = p > thr
        if pos and g:
            tp += 1
        elif pos:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def trapezoid_auc(prob, gt):
    """ROC area by sweeping every distinct score as a threshold."""
    prob, gt = np.ravel(prob), np.ravel(gt).astype(bool)
    pts = [(0.0, 0.0)]
    for t in sorted(set(prob), reverse=True):
        pos = prob >= t
        pts.append(((pos & ~gt).sum() / (~gt).sum(), (pos & gt).sum() / gt.sum()))
    return sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))


def test_pred_equals_gt_has_no_errors():
    gt = (np.random.default_rng(0).random((8, 8)) < 0.3).astype(float)
    for thr in (0.01, 0.5, 0.99):
        c = confusion_counts(gt, gt, thr)
        assert c.fp == 0 and c.fn == 0


def test_tie_at_threshold_is_negative():
    c = confusion_counts(np.array([0.5, 0.5000001]), np.array([1, 1]))
    assert (c.tp, c.fn) == (1, 1)


def test_counts_match_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        prob = rng.random((16, 16))
        gt = rng.random((16, 16)) < 0.4
        thr = float(rng.uniform(0.05, 0.95))
        assert confusion_counts(prob, gt, thr) == loop_counts(prob, gt, thr)


def test_non_binary_gt_rejected():
    with pytest.raises(ValueError):
        confusion_counts(np.zeros(4), np.array([0, 0.5, 1, 1]))


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


def test_perfect_and_inverted():
    gt = np.zeros((4, 4))
    gt[:2] = 1
    c = confusion_counts(gt, gt)
    assert (metric_f1(c), metric_mcc(c), metric_iou(c)) == (1.0, 1.0, 1.0)
    c = confusion_counts(1 - gt, gt)
    assert (metric_f1(c), metric_mcc(c), metric_iou(c)) == (0.0, -1.0, 0.0)


def test_hand_example():
    c = ConfusionCounts(tp=3, fp=1, tn=10, fn=2)
    assert metric_f1(c) == pytest.approx(6 / 9, abs=1e-15)
    assert metric_iou(c) == 0.5
    assert metric_mcc(c) == pytest.approx((3 * 10 - 1 * 2) / math.sqrt(4 * 5 * 11 * 12), abs=1e-15)


def test_zero_denominators():
    empty = ConfusionCounts(0, 0, 10, 0)
    assert metric_f1(empty) == 0.0 and metric_iou(empty) == 0.0 and metric_mcc(empty) == 0.0


def test_auc_examples():
    gt = np.array([0, 0, 1, 1])
    assert metric_auc(np.array([0.1, 0.2, 0.8, 0.9]), gt) == 1.0
    assert metric_auc(np.full(4, 0.3), gt) == 0.5
    assert metric_auc(np.array([0.9, 0.8, 0.1, 0.2]), gt) == 0.0
    assert metric_auc(np.ones(4), np.zeros(4)) is None
    assert metric_auc(np.ones(4), np.ones(4)) is None


def test_auc_matches_trapezoid_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(10):
        prob = np.round(rng.random(200), 1)  # heavy ties
        gt = rng.random(200) < 0.3
        assert metric_auc(prob, gt) == pytest.approx(trapezoid_auc(prob, gt), abs=1e-12)


def test_image_level_score():
    m = np.zeros((4, 4))
    assert image_level_score(m) == 0.0
    m[1, 2] = 0.9
    assert image_level_score(m) == 0.9
    with pytest.raises(ValueError):
        image_level_score(np.zeros(0))


def test_pixel_metrics_bundle():
    gt = np.zeros((4, 4))
    gt[0] = 1
    out = pixel_metrics(gt * 0.9, gt)
    assert out == {"f1": 1.0, "mcc": 1.0, "iou": 1.0, "auc": 1.0}
