"""Dataset registry: per-split counts derived from manifests."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .datagen.io import read_manifest
from .datagen.synth import PRISTINE

# Published real/fake/per-type counts of common forensics sets; None where a breakdown is unpublished.
REFERENCE_COUNTS = {
    "CASIAv2": (7491, 5123, {"copy-move": 3295, "splice": 1828, "inpaint": 0}),
    "DEF-12k-val": (6000, 6000, {"copy-move": 2000, "splice": 2000, "inpaint": 2000}),
    "Columbia": (183, 180, {"copy-move": 0, "splice": 180, "inpaint": 0}),
    "IFC": (1050, 450, None),
    "CASIAv1+": (800, 920, {"copy-move": 459, "splice": 461, "inpaint": 0}),
    "WildWeb": (99, 9657, {"copy-move": 0, "splice": 9657, "inpaint": 0}),
    "COVER": (100, 100, {"copy-move": 100, "splice": 0, "inpaint": 0}),
    "NIST2016": (0, 564, {"copy-move": 68, "splice": 288, "inpaint": 208}),
    "Carvalho": (100, 100, {"copy-move": 0, "splice": 100, "inpaint": 0}),
    "Korus": (220, 220, None),
    "In-the-wild": (0, 201, {"copy-move": 0, "splice": 201, "inpaint": 0}),
    "DEF-12k-test": (6000, 6000, {"copy-move": 2000, "splice": 2000, "inpaint": 2000}),
    "IMD2020": (404, 2010, None),
}


class RegistryError(ValueError):
    pass


@dataclass
class DatasetRegistryEntry:
    name: str
    split: str
    real: int
    fake: int
    per_type: dict = field(default_factory=dict)
    manifest: str = ""

    @classmethod
    def from_manifest(cls, name: str, split: str, manifest) -> "DatasetRegistryEntry":
        counts = Counter(r.manip_type for r in read_manifest(manifest))
        real = counts.pop(PRISTINE, 0)
        return cls(name, split, real, sum(counts.values()), dict(sorted(counts.items())), str(manifest))

    def verify(self) -> None:
        """Counts must agree with the manifest's line counts."""
        fresh = DatasetRegistryEntry.from_manifest(self.name, self.split, self.manifest)
        if (fresh.real, fresh.fake) != (self.real, self.fake) or fresh.per_type != {
                k: v for k, v in sorted(self.per_type.items()) if v}:
            raise RegistryError(f"{self.name}/{self.split}: counts do not match {self.manifest}")

    def matches_reference(self) -> bool:
        if self.name not in REFERENCE_COUNTS:
            raise RegistryError(f"no reference counts for {self.name!r}")
        real, fake, per_type = REFERENCE_COUNTS[self.name]
        if (self.real, self.fake) != (real, fake):
            return False
        return per_type is None or all(self.per_type.get(k, 0) == v for k, v in per_type.items())


def save_registry(path, entries) -> None:
    Path(path).write_text(json.dumps([asdict(e) for e in entries], indent=2, sort_keys=True) + "\n")


def load_registry(path) -> list[DatasetRegistryEntry]:
    """Read and verify a registry; relative manifest paths resolve against its directory."""
    path = Path(path)
    entries = [DatasetRegistryEntry(**e) for e in json.loads(path.read_text())]
    for e in entries:
        if not Path(e.manifest).is_absolute():
            e.manifest = str(path.parent / e.manifest)
        e.verify()
    return entries
