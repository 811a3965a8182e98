"""Serialised evaluation reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class MetricReport:
    per_image: list = field(default_factory=list)  # rows from ImageResult.row()
    aggregate: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)

    def validate(self) -> None:
        for row in self.per_image:
            for key in ("f1", "iou"):
                if not 0.0 <= row[key] <= 1.0:
                    raise ValueError(f"{key} out of range in {row}")
            if not -1.0 <= row["mcc"] <= 1.0:
                raise ValueError(f"mcc out of range in {row}")
            if row["auc"] is not None and not 0.0 <= row["auc"] <= 1.0:
                raise ValueError(f"auc out of range in {row}")

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "aggregate": self.aggregate, "sweep": self.sweep,
                "per_image": self.per_image}

    def write(self, out_dir, stem: str = "report") -> dict:
        """Write ``<stem>.json``, ``<stem>.csv`` and, with a sweep, ``<stem>_sweep.csv``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"json": out_dir / f"{stem}.json", "csv": out_dir / f"{stem}.csv"}
        paths["json"].write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        write_rows(paths["csv"], self.per_image)
        if self.sweep:
            paths["sweep"] = out_dir / f"{stem}_sweep.csv"
            write_rows(paths["sweep"], self.sweep)
        return paths


def write_rows(path, rows: list[dict], fields=None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in fields})
