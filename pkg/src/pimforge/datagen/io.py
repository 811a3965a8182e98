"""Image, label and manifest files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_FIELDS = ("path_image", "path_mask", "path_boundary", "manip_type", "seed")


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Float in [0, 1] to 8-bit, rounding half up."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """H x W x 3 float image as 8-bit PNG, or PPM when the suffix is .ppm."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format=fmt)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_label(path, label: np.ndarray) -> None:
    """Binary map stored as {0, 255} grayscale PNG."""
    Image.fromarray((np.asarray(label) > 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def read_label(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


def write_probability_map(path, prob: np.ndarray) -> None:
    Image.fromarray(to_uint8(prob), mode="L").save(path, format="PNG")


def read_probability_map(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


@dataclass
class ManifestRecord:
    path_image: str
    path_mask: str
    path_boundary: str
    manip_type: str
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_manifest(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(ManifestRecord(**{k: obj[k] for k in MANIFEST_FIELDS}))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed manifest line ({exc})") from exc
    return records
