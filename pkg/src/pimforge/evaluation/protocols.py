"""Evaluation protocols: clean evaluation, threshold sweep, tile shuffle, robustness grid."""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from ..parallel import ordered_map
from .metrics import (DEFAULT_THRESHOLD, confusion_counts, image_level_score, metric_auc, metric_f1,
                      metric_iou, metric_mcc)
from .perturb import KINDS, SEVERITIES, PerturbationSpec, apply_perturbation

SWEEP_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


# ---------------------------------------------------------------- predictors

class ModelPredictor:
    """Forgery probability maps from a trained model, in fixed-size chunks."""

    def __init__(self, model, batch_size: int = 8):
        self.model = model
        self.batch_size = batch_size

    def __call__(self, images: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
        from ..model import model_forward

        outs = []
        for i in range(0, len(images), self.batch_size):
            chunk = images[i:i + self.batch_size].astype(self.model.dtype)
            outs.append(np.asarray(model_forward(chunk, self.model).forgery_prob.data, dtype=np.float64))
        return np.concatenate(outs)


class OraclePredictor:
    """Returns the ground-truth mask as the probability map."""

    def __call__(self, images: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
        if masks is None:
            raise ValueError("the oracle predictor needs ground-truth masks")
        return np.asarray(masks, dtype=np.float64)


def predict(predictor, images: np.ndarray, masks: np.ndarray, workers: int = 1, chunk: int = 16) -> np.ndarray:
    """Run ``predictor`` over fixed chunks, optionally in parallel; output order is input order."""
    starts = range(0, len(images), chunk)
    parts = ordered_map(functools.partial(_predict_chunk, predictor, images, masks, chunk), starts, workers)
    return np.concatenate(parts) if parts else np.zeros((0,) + images.shape[2:])


def _predict_chunk(predictor, images, masks, chunk, start):
    return predictor(images[start:start + chunk], masks[start:start + chunk])


# ---------------------------------------------------------------- per-image evaluation

@dataclass
class ImageResult:
    sample_id: str
    manip_type: str
    forged: bool
    score: float
    f1: float
    mcc: float
    iou: float
    auc: float | None

    def row(self) -> dict:
        return dict(self.__dict__)


def evaluate_maps(probs: np.ndarray, masks: np.ndarray, ids, manip_types,
                  threshold: float = DEFAULT_THRESHOLD) -> list[ImageResult]:
    results = []
    for prob, gt, sid, mt in zip(probs, masks, ids, manip_types):
        c = confusion_counts(prob, gt, threshold)
        results.append(ImageResult(str(sid), mt, bool(gt.any()), image_level_score(prob),
                                   metric_f1(c), metric_mcc(c), metric_iou(c), metric_auc(prob, gt)))
    return sorted(results, key=lambda r: r.sample_id)


def aggregate(results: list[ImageResult], threshold: float = DEFAULT_THRESHOLD) -> dict:
    """Equal-weight means over forged images; image-level AUC/F1 from max-pooled scores."""
    forged = [r for r in results if r.forged]
    aucs = [r.auc for r in results if r.auc is not None]
    out = {
        "n_images": len(results),
        "n_forged": len(forged),
        "pixel_f1": float(np.mean([r.f1 for r in forged])) if forged else 0.0,
        "pixel_mcc": float(np.mean([r.mcc for r in forged])) if forged else 0.0,
        "pixel_iou": float(np.mean([r.iou for r in forged])) if forged else 0.0,
        "pixel_auc": float(np.mean(aucs)) if aucs else None,
        "n_auc_skipped": len(results) - len(aucs),
    }
    labels = np.array([r.forged for r in results], dtype=np.uint8)
    scores = np.array([r.score for r in results])
    out["image_auc"] = metric_auc(scores, labels) if len(results) else None
    if len(results):
        c = confusion_counts(scores, labels, threshold)
        out["image_f1"] = metric_f1(c)
        out["image_accuracy"] = (c.tp + c.tn) / c.total
    return out


def threshold_sweep(preds, gts, thresholds=SWEEP_THRESHOLDS) -> list[dict]:
    """Mean F1 / MCC / IoU over the image set at each threshold."""
    preds = list(preds)
    gts = list(gts)
    if not preds:
        raise ValueError("threshold_sweep: empty prediction set")
    if len(preds) != len(gts):
        raise ValueError("threshold_sweep: predictions and ground truths differ in number")
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError(f"threshold_sweep: threshold {t} outside (0, 1)")
    rows = []
    for t in thresholds:
        counts = [confusion_counts(p, g, t) for p, g in zip(preds, gts)]
        rows.append({"threshold": float(t),
                     "f1": float(np.mean([metric_f1(c) for c in counts])),
                     "mcc": float(np.mean([metric_mcc(c) for c in counts])),
                     "iou": float(np.mean([metric_iou(c) for c in counts]))})
    return rows


# ---------------------------------------------------------------- tile shuffle

@dataclass
class ShuffleMeta:
    k: int
    tile: tuple  # (th, tw)
    region: tuple  # (rh, rw), the shuffled top-left block; the margin stays put
    perm: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"k": self.k, "tile": list(self.tile), "region": list(self.region), "perm": list(self.perm)}


def _tiles(arr: np.ndarray, k: int, th: int, tw: int) -> np.ndarray:
    rest = arr.shape[2:]
    return arr[:k * th, :k * tw].reshape(k, th, k, tw, *rest).swapaxes(1, 2).reshape(k * k, th, tw, *rest)


def _untile(tiles: np.ndarray, out: np.ndarray, k: int, th: int, tw: int) -> None:
    rest = tiles.shape[3:]
    out[:k * th, :k * tw] = tiles.reshape(k, k, th, tw, *rest).swapaxes(1, 2).reshape(k * th, k * tw, *rest)


def _permute(arr: np.ndarray, meta: ShuffleMeta, order) -> np.ndarray:
    th, tw = meta.tile
    out = np.array(arr, copy=True)
    _untile(_tiles(arr, meta.k, th, tw)[np.asarray(order)], out, meta.k, th, tw)
    return out


def shuffle_patches(image: np.ndarray, labels: dict, k: int = 3, rng_seed=0, perm=None):
    """Cut the image into a k x k grid of tiles and permute them; labels follow the same permutation.

    When H or W is not a multiple of ``k`` the grid covers the largest
    multiple-of-k block at the top-left and the remaining margin is left in
    place; ``meta.region`` records the block.
    """
    h, w = image.shape[:2]
    if k < 1 or k > min(h, w):
        raise ValueError(f"shuffle_patches: k={k} invalid for a {h}x{w} image")
    th, tw = h // k, w // k
    if perm is None:
        perm = np.random.default_rng(rng_seed).permutation(k * k)
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(k * k)):
        raise ValueError("shuffle_patches: perm is not a permutation of the tiles")
    meta = ShuffleMeta(k, (th, tw), (k * th, k * tw), perm)
    return (_permute(image, meta, perm), {name: _permute(v, meta, perm) for name, v in labels.items()}, meta)


def unshuffle_patches(image: np.ndarray, labels: dict, meta: ShuffleMeta):
    inverse = np.argsort(meta.perm)
    return _permute(image, meta, inverse), {name: _permute(v, meta, inverse) for name, v in labels.items()}


def shuffle_split(images: np.ndarray, masks: np.ndarray, k: int, seed: int):
    """Shuffle every N x 3 x H x W image (and its mask) with a per-image permutation."""
    out_i = np.empty_like(images)
    out_m = np.empty_like(masks)
    metas = []
    children = np.random.SeedSequence(seed).spawn(len(images))
    for n, (img, m) in enumerate(zip(images, masks)):
        si, sl, meta = shuffle_patches(img.transpose(1, 2, 0), {"mask": m}, k, np.random.default_rng(children[n]))
        out_i[n] = si.transpose(2, 0, 1)
        out_m[n] = sl["mask"]
        metas.append(meta)
    return out_i, out_m, metas


# ---------------------------------------------------------------- robustness grid

def perturb_split(images: np.ndarray, spec: PerturbationSpec, seed: int) -> np.ndarray:
    if spec.severity == 0:
        return images.copy()
    kind_idx = KINDS.index(spec.kind)
    out = np.empty_like(images)
    for n, img in enumerate(images):
        ss = np.random.SeedSequence([seed, kind_idx, spec.severity, n])
        out[n] = apply_perturbation(img.transpose(1, 2, 0), spec, ss).transpose(2, 0, 1)
    return out


def robustness_grid(predictor, images, masks, ids, manip_types, seed: int = 0, kinds=KINDS,
                    severities=SEVERITIES, workers: int = 1) -> list[dict]:
    """Mean per-image pixel AUC for every (kind, severity) cell."""
    rows = []
    for kind in kinds:
        for s in severities:
            pert = perturb_split(images, PerturbationSpec(kind, s), seed)
            probs = predict(predictor, pert, masks, workers)
            res = evaluate_maps(probs, masks, ids, manip_types)
            agg = aggregate(res)
            rows.append({"kind": kind, "severity": int(s), "auc": agg["pixel_auc"],
                         "n_images": agg["n_images"] - agg["n_auc_skipped"], "n_skipped": agg["n_auc_skipped"]})
    return rows
