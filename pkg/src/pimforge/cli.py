"""Command-line entry point: simulate | train | eval | perturb."""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig
from .datagen import load_split, simulate_split
from .datagen.io import write_probability_map
from .evaluation import (MetricReport, ModelPredictor, OraclePredictor, aggregate, evaluate_maps, predict,
                         robustness_grid, shuffle_split, threshold_sweep)
from .evaluation.report import write_rows
from .registry import DatasetRegistryEntry, save_registry
from .training import NumericFailure, run_training

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ROBUSTNESS_FIELDS = ("kind", "severity", "auc", "n_images", "n_skipped")

log = logging.getLogger("pimforge")


class DataError(RuntimeError):
    pass


def _load_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg.seed = args.seed
    if getattr(args, "data", None):
        cfg.paths.data_dir = args.data
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg.eval.workers = args.workers
    return cfg


def _split(cfg: RunConfig, name: str):
    manifest = Path(cfg.paths.data_dir) / name / "manifest.jsonl"
    if not manifest.is_file():
        raise DataError(f"dataset split not found: {manifest} (run `pimforge simulate` first)")
    try:
        return load_split(manifest)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _predictor(cfg: RunConfig, checkpoint: str | None):
    if checkpoint is None:
        raise ConfigError("--checkpoint is required (a checkpoint path or 'oracle')")
    if checkpoint == "oracle":
        return OraclePredictor()
    if not Path(checkpoint).is_file():
        raise DataError(f"checkpoint not found: {checkpoint}")
    model, _, _ = load_checkpoint(checkpoint)
    return ModelPredictor(model, cfg.eval.batch_size)


def _quantize_maps(probs: np.ndarray) -> np.ndarray:
    # scored maps are exactly what the 8-bit PNGs store
    return np.floor(np.clip(probs, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def cmd_simulate(cfg: RunConfig, out: str | None) -> int:
    data_dir = Path(out or cfg.paths.data_dir)
    try:
        data_dir.mkdir(parents=True, exist_ok=True)
        probe = data_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory not writable: {data_dir} ({exc})") from exc
    d = cfg.data
    ss_train, ss_test = np.random.SeedSequence(cfg.seed).spawn(2)
    entries = []
    for split, n_p, n_f, ss in (("train", d.train_pristine, d.train_forged, ss_train),
                                ("test", d.test_pristine, d.test_forged, ss_test)):
        seed = int(ss.generate_state(1)[0])
        manifest = simulate_split(data_dir / split, n_p, n_f, seed, d.image_size, d.mix,
                                  (d.area_min, d.area_max), d.mismatched_splice, cfg.eval.workers)
        entry = DatasetRegistryEntry.from_manifest("synthetic", split, manifest)
        entry.manifest = str(manifest.relative_to(data_dir))
        entries.append(entry)
        log.info("wrote %s (%d pristine, %d forged)", manifest, n_p, n_f)
    save_registry(data_dir / "registry.json", entries)
    # paths in the echo are relative to the echo itself, so it does not depend on where the data lives
    echo = copy.deepcopy(cfg)
    echo.paths.data_dir = "."
    echo.paths.out_dir = os.path.relpath(Path(cfg.paths.out_dir).resolve(), data_dir.resolve())
    (data_dir / "config.toml").write_text(echo.dumps())
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: str | None, checkpoint: str | None) -> int:
    out_dir = Path(out or cfg.paths.out_dir)
    train = _split(cfg, "train")
    test = _split(cfg, "test") if cfg.optim.validate_every else None
    model = state = None
    start = 0
    if checkpoint:
        try:
            model, state, meta = load_checkpoint(checkpoint, expect=cfg.model)
        except FileNotFoundError as exc:
            raise DataError(f"checkpoint not found: {checkpoint}") from exc
        start = int(meta.get("step", 0))
        log.info("resuming from %s at step %d", checkpoint, start)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.toml")
    run_training(cfg, train, out_dir, test, model, state, start, log=log.info)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: str | None, checkpoint: str | None, threshold: float | None,
             sweep: bool, shuffle_k: int | None, save_maps: bool) -> int:
    thr = cfg.eval.threshold if threshold is None else threshold
    if not 0.0 < thr < 1.0:
        raise ConfigError(f"--threshold must lie in (0, 1), got {thr}")
    if shuffle_k is not None and shuffle_k < 1:
        raise ConfigError("--shuffle K needs K >= 1")
    out_dir = Path(out or Path(cfg.paths.out_dir) / "eval")
    test = _split(cfg, "test")
    predictor = _predictor(cfg, checkpoint)
    images, masks, stem = test.images, test.masks, "report"
    shuffle_meta = None
    if shuffle_k:
        images, masks, metas = shuffle_split(images, masks, shuffle_k, cfg.seed)
        stem = f"report_shuffle_k{shuffle_k}"
        shuffle_meta = [m.to_dict() for m in metas]
    probs = _quantize_maps(predict(predictor, images, masks, cfg.eval.workers))
    results = evaluate_maps(probs, masks, test.ids, test.manip_types, thr)
    forged = [i for i in range(len(test)) if masks[i].any()]
    report = MetricReport(
        per_image=[r.row() for r in results],
        aggregate=aggregate(results, thr),
        metadata={"dataset": str(Path(cfg.paths.data_dir) / "test"), "threshold": thr,
                  "checkpoint": checkpoint, "perturbation": None, "shuffle_k": shuffle_k,
                  "shuffle": shuffle_meta},
        sweep=threshold_sweep(probs[forged], masks[forged]) if sweep and forged else [],
    )
    report.validate()
    paths = report.write(out_dir, stem)
    if save_maps:
        map_dir = out_dir / ("maps" if not shuffle_k else f"maps_shuffle_k{shuffle_k}")
        map_dir.mkdir(parents=True, exist_ok=True)
        for sid, p in zip(test.ids, probs):
            write_probability_map(map_dir / f"{sid}.png", p)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    print(json.dumps(report.aggregate, sort_keys=True))
    return EXIT_OK


def cmd_perturb(cfg: RunConfig, out: str | None, checkpoint: str | None) -> int:
    out_dir = Path(out or Path(cfg.paths.out_dir) / "perturb")
    test = _split(cfg, "test")
    predictor = _predictor(cfg, checkpoint)
    quantized = _Quantized(predictor)
    rows = robustness_grid(quantized, test.images, test.masks, test.ids, test.manip_types, cfg.seed,
                           workers=cfg.eval.workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows(out_dir / "robustness.csv", rows, ROBUSTNESS_FIELDS)
    log.info("wrote %s (%d cells)", out_dir / "robustness.csv", len(rows))
    return EXIT_OK


class _Quantized:
    def __init__(self, predictor):
        self.predictor = predictor

    def __call__(self, images, masks=None):
        return _quantize_maps(self.predictor(images, masks))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimforge", description="Synthetic forgery localisation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, workers=True):
        p.add_argument("--config", metavar="PATH", help="TOML run configuration")
        p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        if workers:
            p.add_argument("--workers", type=int, metavar="N", help="parallel worker processes")
        return p

    common(sub.add_parser("simulate", help="generate the synthetic dataset"))
    p = common(sub.add_parser("train", help="train a model"), workers=False)
    p.add_argument("--data", metavar="DIR", help="dataset directory (overrides paths.data_dir)")
    p.add_argument("--checkpoint", metavar="PATH", help="resume from this checkpoint")
    p = common(sub.add_parser("eval", help="evaluate on the test split"))
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint file, or 'oracle'")
    p.add_argument("--threshold", type=float, metavar="F")
    p.add_argument("--sweep", action="store_true", help="add the 0.1..0.9 threshold sweep")
    p.add_argument("--shuffle", type=int, metavar="K", help="evaluate on K x K tile-shuffled images")
    p.add_argument("--save-maps", action="store_true", help="write prediction maps as PNG")
    p = common(sub.add_parser("perturb", help="robustness grid over perturbation kinds and severities"))
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint file, or 'oracle'")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
        if args.verb == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.verb == "train":
            return cmd_train(cfg, args.out, args.checkpoint)
        if args.verb == "eval":
            return cmd_eval(cfg, args.out, args.checkpoint, args.threshold, args.sweep, args.shuffle,
                            args.save_maps)
        return cmd_perturb(cfg, args.out, args.checkpoint)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
