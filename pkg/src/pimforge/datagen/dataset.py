"""Synthetic dataset simulation and loading."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..parallel import ordered_map
from .cfa import CfaPattern
from .io import ManifestRecord, read_image, read_label, read_manifest, write_image, write_label, write_manifest
from .pida import pida_generate
from .synth import MANIP_TYPES, PRISTINE, ForgeryError, ForgerySample, pristine_image, pristine_sample, synth_forgery

DEFAULT_MIX = {"splice": 0.5, "copy-move": 0.3, "inpaint": 0.2}


def allocate_counts(n: int, mix: dict) -> dict:
    """Split ``n`` over the mix by largest remainder; ties go to the earlier key."""
    if n < 0:
        raise ValueError("count must be nonnegative")
    unknown = set(mix) - set(MANIP_TYPES)
    if unknown:
        raise ValueError(f"unknown manipulation types in mix: {sorted(unknown)}")
    total = sum(mix.values())
    if total <= 0 or any(v < 0 for v in mix.values()):
        raise ValueError("mix weights must be nonnegative and not all zero")
    keys = list(mix)
    exact = [n * mix[k] / total for k in keys]
    counts = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(keys)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return dict(zip(keys, counts))


def _opposite_parity(rng: np.random.Generator, pattern: CfaPattern) -> CfaPattern:
    choices = [CfaPattern(dx, dy) for dx in (0, 1) for dy in (0, 1)
               if (dx + dy) % 2 != pattern.green_parity]
    return choices[int(rng.integers(len(choices)))]


def generate_sample(kind: str, seed: int, size: int = 64, area_range=(0.01, 0.25),
                    mismatched_splice: bool = True, region_attempts: int = 10) -> ForgerySample:
    """Build one sample of ``kind`` purely from ``seed``.

    A copy-move region with no free placement is redrawn, up to
    ``region_attempts`` regions in total.
    """
    rng = np.random.default_rng(seed)
    target, pattern = pristine_image(rng, size, size)
    if kind == PRISTINE:
        return pristine_sample(target, {"pattern": [pattern.dx, pattern.dy]})
    if kind == "pida-blend":
        sample = pida_generate(target, None, rng_seed=rng)
    else:
        donor = None
        if kind == "splice":
            donor_pattern = _opposite_parity(rng, pattern) if mismatched_splice else None
            donor, donor_pattern = pristine_image(rng, size, size, donor_pattern)
        for attempt in range(region_attempts):
            try:
                sample = synth_forgery(donor, target, kind, rng, area_range=area_range)
                break
            except ForgeryError:
                if attempt == region_attempts - 1:
                    raise
        if kind == "splice":
            sample.meta["donor_pattern"] = [donor_pattern.dx, donor_pattern.dy]
    sample.meta["pattern"] = [pattern.dx, pattern.dy]
    return sample


def sample_plan(n_pristine: int, n_forged: int, mix: dict, seed: int) -> list[tuple[str, int]]:
    """Deterministic (kind, per-sample seed) list; pristine first, forged kinds shuffled."""
    counts = allocate_counts(n_forged, mix)
    kinds = [PRISTINE] * n_pristine
    forged = [k for k, c in counts.items() for _ in range(c)]
    root = np.random.SeedSequence(seed)
    order_ss, samples_ss = root.spawn(2)
    perm = np.random.default_rng(order_ss).permutation(len(forged))
    kinds += [forged[i] for i in perm]
    children = samples_ss.spawn(len(kinds))
    return [(k, int(c.generate_state(1)[0])) for k, c in zip(kinds, children)]


def _write_one(args, out_dir: Path, size: int, area_range, mismatched_splice: bool) -> ManifestRecord:
    idx, kind, seed = args
    sample = generate_sample(kind, seed, size, area_range, mismatched_splice)
    sample.validate()
    stem = f"{idx:05d}"
    rec = ManifestRecord(f"images/{stem}.png", f"masks/{stem}.png", f"boundaries/{stem}.png", kind, seed)
    write_image(out_dir / rec.path_image, sample.image)
    write_label(out_dir / rec.path_mask, sample.mask)
    write_label(out_dir / rec.path_boundary, sample.boundary)
    return rec


def simulate_split(out_dir, n_pristine: int, n_forged: int, seed: int, size: int = 64, mix: dict | None = None,
                   area_range=(0.01, 0.25), mismatched_splice: bool = True, workers: int = 1) -> Path:
    """Write images, labels and ``manifest.jsonl`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    for sub in ("images", "masks", "boundaries"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    plan = sample_plan(n_pristine, n_forged, mix or DEFAULT_MIX, seed)
    job = functools.partial(_write_one, out_dir=out_dir, size=size, area_range=tuple(area_range),
                            mismatched_splice=mismatched_splice)
    records = ordered_map(job, [(i, k, s) for i, (k, s) in enumerate(plan)], workers)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


@dataclass
class LoadedSplit:
    images: np.ndarray  # N x 3 x H x W float64
    masks: np.ndarray  # N x H x W uint8
    boundaries: np.ndarray
    manip_types: list
    seeds: list
    ids: list

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def is_forged(self) -> np.ndarray:
        return np.array([t != PRISTINE for t in self.manip_types])

    def batch(self, idx) -> dict:
        idx = np.asarray(idx)
        return {"image": self.images[idx], "mask": self.masks[idx], "boundary": self.boundaries[idx]}


def load_split(manifest_path) -> LoadedSplit:
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    if not records:
        raise ValueError(f"empty manifest: {manifest_path}")
    root = manifest_path.parent
    images, masks, bounds = [], [], []
    for rec in records:
        for p in (rec.path_image, rec.path_mask, rec.path_boundary):
            if not (root / p).is_file():
                raise FileNotFoundError(f"missing file referenced by manifest: {root / p}")
        images.append(read_image(root / rec.path_image).transpose(2, 0, 1))
        masks.append(read_label(root / rec.path_mask))
        bounds.append(read_label(root / rec.path_boundary))
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images in {manifest_path} have differing shapes {sorted(shapes)}")
    return LoadedSplit(np.stack(images), np.stack(masks), np.stack(bounds),
                       [r.manip_type for r in records], [r.seed for r in records],
                       [Path(r.path_image).stem for r in records])
