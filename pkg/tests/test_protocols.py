import csv
import json

import numpy as np
import pytest

from pimforge.datagen import generate_sample
from pimforge.evaluation import (KINDS, PerturbationSpec, aggregate, apply_perturbation, confusion_counts,
                                 evaluate_maps, metric_auc, metric_f1, metric_iou, metric_mcc)
from pimforge.evaluation.perturb import floyd_steinberg, psnr, severity_parameter, wavelet_quantize
from pimforge.evaluation.protocols import (SWEEP_THRESHOLDS, OraclePredictor, perturb_split, predict,
                                           robustness_grid, shuffle_patches, shuffle_split, threshold_sweep,
                                           unshuffle_patches)
from pimforge.evaluation.report import MetricReport


@pytest.fixture(scope="module")
def images():
    return [generate_sample(k, s, size=32).image for s, k in enumerate(["splice", "inpaint", "copy-move"] * 4)][:10]


# perturbations

def test_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec("blur", 1)
    with pytest.raises(ValueError):
        PerturbationSpec("brightness", 10)
    with pytest.raises(ValueError):
        PerturbationSpec("brightness", 1.5)


@pytest.mark.parametrize("kind", KINDS)
def test_severity_zero_is_identity(kind, images):
    out = apply_perturbation(images[0], PerturbationSpec(kind, 0), rng_seed=3)
    assert np.array_equal(out, images[0])


def test_brightness_table():
    img = np.full((4, 4, 3), 0.5)
    img[0, 0] = 0.9
    for s in (1, 4, 9):
        out = apply_perturbation(img, PerturbationSpec("brightness", s))
        np.testing.assert_array_equal(out, np.clip(img + 0.05 * s, 0, 1))


def test_table_values():
    assert severity_parameter("contrast", 3) == pytest.approx(1.3)
    assert severity_parameter("darkening", 5) == pytest.approx(2.0)
    assert severity_parameter("dithering", 9) == 2
    assert severity_parameter("pink_noise", 4) == pytest.approx(0.04)
    assert severity_parameter("jpeg2000_like", 2) == pytest.approx(0.008)


def test_wavelet_small_step_near_lossless(images):
    np.testing.assert_allclose(wavelet_quantize(images[0], 1e-9), images[0], atol=1e-9)


def test_dither_levels(images):
    out = floyd_steinberg(images[0], 3)
    assert set(np.unique(out)) <= {0.0, 0.5, 1.0}


def test_noise_kinds_deterministic(images):
    for kind in ("pink_noise", "dithering"):
        a = apply_perturbation(images[1], PerturbationSpec(kind, 5), rng_seed=9)
        b = apply_perturbation(images[1], PerturbationSpec(kind, 5), rng_seed=9)
        assert np.array_equal(a, b)


@pytest.mark.parametrize("kind", KINDS)
def test_psnr_non_increasing_in_severity(kind, images):
    curve = [np.mean([psnr(img, apply_perturbation(img, PerturbationSpec(kind, s), rng_seed=n))
                      for n, img in enumerate(images)]) for s in range(1, 10)]
    assert all(b <= a + 0.5 for a, b in zip(curve, curve[1:])), curve


def test_output_clamped(images):
    for kind in KINDS:
        out = apply_perturbation(images[2], PerturbationSpec(kind, 9), rng_seed=1)
        assert out.min() >= 0 and out.max() <= 1


# sweep

def _maps(seed=0, n=4):
    rng = np.random.default_rng(seed)
    gts = [(rng.random((8, 8)) < 0.3).astype(np.uint8) for _ in range(n)]
    preds = [np.clip(g * 0.6 + rng.random((8, 8)) * 0.5, 0, 1) for g in gts]
    return preds, gts


def test_sweep_thresholds_and_rows():
    assert SWEEP_THRESHOLDS == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    preds, gts = _maps()
    rows = threshold_sweep(preds, gts)
    assert [r["threshold"] for r in rows] == list(SWEEP_THRESHOLDS)
    for r in rows:
        counts = [confusion_counts(p, g, r["threshold"]) for p, g in zip(preds, gts)]
        assert r["f1"] == np.mean([metric_f1(c) for c in counts])
        assert r["mcc"] == np.mean([metric_mcc(c) for c in counts])
        assert r["iou"] == np.mean([metric_iou(c) for c in counts])


def test_sweep_perfect_prediction():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[1:3, 1:3] = 1
    for r in threshold_sweep([gt.astype(float)], [gt]):
        assert (r["f1"], r["mcc"], r["iou"]) == (1.0, 1.0, 1.0)


def test_sweep_errors():
    preds, gts = _maps()
    with pytest.raises(ValueError):
        threshold_sweep([], [])
    with pytest.raises(ValueError):
        threshold_sweep(preds, gts, thresholds=[0.0, 0.5])
    with pytest.raises(ValueError):
        threshold_sweep(preds, gts, thresholds=[1.0])


# aggregate

def test_aggregate_skips_single_class_auc():
    preds, gts = _maps(1, 3)
    gts[2][:] = 0
    res = evaluate_maps(np.stack(preds), np.stack(gts), ["b", "a", "c"], ["splice", "splice", "pristine"])
    assert [r.sample_id for r in res] == ["a", "b", "c"]
    agg = aggregate(res)
    assert agg["n_auc_skipped"] == 1
    assert agg["n_forged"] == 2
    assert agg["pixel_auc"] == pytest.approx(np.mean([metric_auc(p, g) for p, g in zip(preds[:2], gts[:2])]))
    assert agg["pixel_f1"] == pytest.approx(np.mean([r.f1 for r in res if r.forged]))


def test_image_level_f1_matches_direct_oracle():
    rng = np.random.default_rng(4)
    gts, preds = [], []
    for n in range(20):
        g = np.zeros((8, 8), dtype=np.uint8)
        if n % 2:
            g[2:5, 2:5] = 1
        gts.append(g)
        preds.append(rng.random((8, 8)) * (0.9 if n % 2 else 0.6))
    agg = aggregate(evaluate_maps(np.stack(preds), np.stack(gts), range(20), ["x"] * 20))
    labels = [int(g.any()) for g in gts]
    scores = [p.max() for p in preds]
    tp = sum(s > 0.5 and y for s, y in zip(scores, labels))
    fp = sum(s > 0.5 and not y for s, y in zip(scores, labels))
    fn = sum(s <= 0.5 and y for s, y in zip(scores, labels))
    assert agg["image_f1"] == pytest.approx(2 * tp / (2 * tp + fp + fn))
    assert agg["image_auc"] == metric_auc(np.array(scores), np.array(labels))


def test_oracle_predictor_scores_perfectly():
    s = [generate_sample("splice", n, size=32) for n in range(3)]
    masks = np.stack([x.mask for x in s])
    imgs = np.stack([x.image.transpose(2, 0, 1) for x in s])
    probs = predict(OraclePredictor(), imgs, masks, chunk=2)
    agg = aggregate(evaluate_maps(probs, masks, range(3), ["splice"] * 3))
    assert (agg["pixel_f1"], agg["pixel_mcc"], agg["pixel_iou"], agg["pixel_auc"]) == (1.0, 1.0, 1.0, 1.0)


# shuffle

def test_identity_permutation_unchanged(images):
    img = images[0]
    m = (img[..., 0] > 0.5).astype(np.uint8)
    si, sl, _ = shuffle_patches(img, {"mask": m}, k=3, perm=list(range(9)))
    assert np.array_equal(si, img) and np.array_equal(sl["mask"], m)


def test_unshuffle_restores_and_labels_follow(images):
    img = images[1]  # 32 x 32: the 30 x 30 block shuffles, a 2-pixel margin stays put
    m = (np.random.default_rng(5).random((32, 32)) < 0.3).astype(np.uint8)
    si, sl, meta = shuffle_patches(img, {"mask": m}, k=3, rng_seed=7)
    assert meta.region == (30, 30) and meta.tile == (10, 10)
    assert np.array_equal(si[30:], img[30:]) and np.array_equal(si[:, 30:], img[:, 30:])
    for dst, src in enumerate(meta.perm):
        ry, rx = divmod(dst, 3)
        sy, sx = divmod(src, 3)
        assert np.array_equal(sl["mask"][ry * 10:ry * 10 + 10, rx * 10:rx * 10 + 10],
                              m[sy * 10:sy * 10 + 10, sx * 10:sx * 10 + 10])
    ui, ul = unshuffle_patches(si, sl, meta)
    assert np.array_equal(ui, img) and np.array_equal(ul["mask"], m)


def test_shuffle_rejects_bad_inputs(images):
    with pytest.raises(ValueError):
        shuffle_patches(images[0], {}, k=3, perm=[0, 0, 1, 2, 3, 4, 5, 6, 7])
    with pytest.raises(ValueError):
        shuffle_patches(images[0], {}, k=0)


def test_shuffle_split_deterministic(images):
    imgs = np.stack([i.transpose(2, 0, 1) for i in images[:3]])
    masks = (imgs[:, 0] > 0.5).astype(np.uint8)
    a = shuffle_split(imgs, masks, 3, seed=1)
    b = shuffle_split(imgs, masks, 3, seed=1)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert [m.perm for m in a[2]] == [m.perm for m in b[2]]


# robustness grid

def test_grid_shape_and_severity_zero():
    s = [generate_sample(k, n, size=32) for n, k in enumerate(["splice", "inpaint", "copy-move"])]
    imgs = np.stack([x.image.transpose(2, 0, 1) for x in s])
    masks = np.stack([x.mask for x in s])

    def blurry(images, masks=None):
        return images.mean(axis=1)  # a deterministic image-dependent "prediction"

    rows = robustness_grid(blurry, imgs, masks, range(3), ["x"] * 3, seed=2)
    assert len(rows) == 60
    assert [(r["kind"], r["severity"]) for r in rows] == [(k, v) for k in KINDS for v in range(10)]
    clean = aggregate(evaluate_maps(blurry(imgs), masks, range(3), ["x"] * 3))["pixel_auc"]
    for r in rows:
        if r["severity"] == 0:
            assert r["auc"] == clean
    cell = next(r for r in rows if r["kind"] == "contrast" and r["severity"] == 4)
    pert = perturb_split(imgs, PerturbationSpec("contrast", 4), 2)
    assert cell["auc"] == aggregate(evaluate_maps(blurry(pert), masks, range(3), ["x"] * 3))["pixel_auc"]


# report

def test_report_write_and_validate(tmp_path):
    preds, gts = _maps(6, 2)
    res = evaluate_maps(np.stack(preds), np.stack(gts), ["0", "1"], ["splice", "splice"])
    rep = MetricReport([r.row() for r in res], aggregate(res), {"threshold": 0.5}, threshold_sweep(preds, gts))
    rep.validate()
    paths = rep.write(tmp_path, "clean")
    data = json.loads(paths["json"].read_text())
    assert data["aggregate"] == json.loads(json.dumps(rep.aggregate))
    with open(paths["csv"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["sample_id"] for r in rows] == ["0", "1"]
    assert len(list(csv.DictReader(open(paths["sweep"])))) == 9
    bad = MetricReport([dict(rep.per_image[0], f1=1.5)])
    with pytest.raises(ValueError):
        bad.validate()
