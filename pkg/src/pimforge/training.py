"""Single optimisation step and helpers around it."""
from __future__ import annotations

import math

import numpy as np

from .losses import LossWeights, total_loss
from .model import TwoStreamModel, model_forward
from .tensor import AdamState, Tape, adam_step, backward


class NumericFailure(FloatingPointError):
    """Loss or gradients went non-finite; ``components`` holds the last loss terms."""

    def __init__(self, message: str, components: dict):
        super().__init__(f"{message}: " + ", ".join(f"{k}={v!r}" for k, v in components.items()))
        self.components = components


def make_optimizer(model: TwoStreamModel, lr: float = 6e-5, weight_decay: float = 1e-5,
                   betas=(0.9, 0.999), eps: float = 1e-8, decoupled: bool = True) -> AdamState:
    state = AdamState(learning_rate=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1],
                      epsilon=eps, decoupled=decoupled)
    state.init_for(model.parameters())
    return state


def train_step(model: TwoStreamModel, batch: dict, state: AdamState, w: LossWeights) -> dict:
    """One forward, one backward, one Adam update. Returns float loss components."""
    params = model.parameters()
    for p in params:
        p.grad = None
    with Tape() as tape:
        preds = model_forward(batch["image"], model)
        total, comps = total_loss(preds, batch, w)
    values = {k: float(v.data) for k, v in comps.items()}
    values["total"] = float(total.data)
    if not all(math.isfinite(v) for v in values.values()):
        raise NumericFailure("non-finite loss", values)
    backward(tape, total, params=params)
    bad = [i for i, p in enumerate(params) if not np.all(np.isfinite(p.grad))]
    if bad:
        raise NumericFailure(f"non-finite gradient in {len(bad)} parameter tensors", values)
    adam_step(params, None, state)
    return values


LOG_FIELDS = ("step", "L_M", "L_B", "L_C", "L_R", "total")


def augment_batch(split, idx, aug, seed: int, step: int) -> dict:
    """Batch arrays for ``idx``, with optional PIDA on pristine samples and RDA on all."""
    from .datagen.pida import pida_generate
    from .datagen.rda import rda_apply
    from .datagen.synth import ForgeryError, ForgerySample, pristine_sample

    batch = split.batch(idx)
    if not (aug.rda or aug.pida):
        return batch
    images, masks, bounds = batch["image"].copy(), batch["mask"].copy(), batch["boundary"].copy()
    for j, n in enumerate(idx):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, step, j]))
        img = images[j].transpose(1, 2, 0)
        if split.manip_types[n] == "pristine":
            sample = pristine_sample(img)
        else:
            sample = ForgerySample(img, masks[j], bounds[j], split.manip_types[n])
        if aug.pida and not sample.is_forged and rng.random() < aug.pida_probability:
            try:
                sample = pida_generate(img, None, rng_seed=rng)
            except ForgeryError:
                pass
        if aug.rda:
            sample = rda_apply(sample, rng, p=aug.rda_probability)
        images[j] = sample.image.transpose(2, 0, 1)
        masks[j], bounds[j] = sample.mask, sample.boundary
    return {"image": images, "mask": masks, "boundary": bounds}


def batch_schedule(n: int, batch_size: int, steps: int, seed: int, start: int = 0):
    """Yield (step, indices); each epoch is a fresh permutation, the last partial batch is dropped."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    per_epoch = max(n // batch_size, 1)
    perm, step = None, 0
    while step < steps:
        if step % per_epoch == 0:
            perm = rng.permutation(n)
        k = step % per_epoch
        if step >= start:
            yield step, perm[k * batch_size:(k + 1) * batch_size] if n >= batch_size else perm
        step += 1


def run_training(cfg, train_split, out_dir, test_split=None, model=None, state=None, start_step: int = 0,
                 log=None) -> tuple:
    """Train for ``cfg.optim.steps`` total steps; writes ``train_log.csv`` and checkpoints under ``out_dir``.

    Returns ``(model, state)``. Raises NumericFailure on a non-finite loss or gradient.
    """
    import csv
    from pathlib import Path

    from .checkpoint import save_checkpoint
    from .evaluation.protocols import ModelPredictor, aggregate, evaluate_maps, predict

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model or TwoStreamModel(cfg.model)
    o = cfg.optim
    if state is None:
        state = make_optimizer(model, o.learning_rate, o.weight_decay, (o.beta1, o.beta2), o.epsilon, o.decoupled)
    log_path = out_dir / "train_log.csv"
    fresh = not start_step or not log_path.exists() or log_path.stat().st_size == 0
    log_fh = open(log_path, "w" if fresh else "a", newline="", encoding="utf-8")
    val_rows = []
    try:
        writer = csv.writer(log_fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_FIELDS)
        for step, idx in batch_schedule(len(train_split), o.batch_size, o.steps, cfg.seed, start_step):
            batch = augment_batch(train_split, idx, cfg.augment, cfg.seed, step)
            batch["image"] = batch["image"].astype(model.dtype)
            values = train_step(model, batch, state, cfg.loss)
            writer.writerow([step + 1] + [repr(values[k]) for k in LOG_FIELDS[1:]])
            done = step + 1
            if log and (done % 100 == 0 or done == o.steps):
                log(f"step {done}/{o.steps} total={values['total']:.4f}")
            if test_split is not None and o.validate_every and done % o.validate_every == 0:
                probs = predict(ModelPredictor(model, cfg.eval.batch_size), test_split.images, test_split.masks)
                agg = aggregate(evaluate_maps(probs, test_split.masks, test_split.ids, test_split.manip_types))
                val_rows.append({"step": done, "pixel_auc": agg["pixel_auc"], "image_auc": agg["image_auc"],
                                 "pixel_f1": agg["pixel_f1"]})
                if log:
                    log(f"validation at {done}: pixel_auc={agg['pixel_auc']:.4f} image_auc={agg['image_auc']:.4f}")
            if o.checkpoint_every and done % o.checkpoint_every == 0 and done != o.steps:
                save_checkpoint(out_dir / f"checkpoint_step{done:06d}.pimf", model, state, {"step": done})
    finally:
        log_fh.close()
    if val_rows:
        from .evaluation.report import write_rows
        write_rows(out_dir / "validation.csv", val_rows)
    save_checkpoint(out_dir / "checkpoint_final.pimf", model, state, {"step": max(o.steps, start_step)})
    return model, state
