"""Dataset manifests: a JSON index of SMF files with ages and splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, ParseError
from ..rng import stream
from .smf import read_smf

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
# train : test : val
SPLIT_RATIO = (423, 54, 53)


@dataclass
class Entry:
    path: str
    age_weeks: float | None
    split: str


@dataclass
class Manifest:
    level: int
    entries: list[Entry] = field(default_factory=list)
    normalization: dict | None = None
    root: Path = Path(".")

    def paths(self, split: str | None = None) -> list[Path]:
        return [self.root / e.path for e in self.entries if split is None or e.split == split]

    def select(self, split: str | None = None) -> list[Entry]:
        return [e for e in self.entries if split is None or e.split == split]

    def load_maps(self, split: str | None = None):
        return [read_smf(self.root / e.path) for e in self.select(split)]

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "level": self.level,
            "samples": [
                {"path": e.path, "age_weeks": e.age_weeks, "split": e.split} for e in self.entries
            ],
            "normalization": self.normalization,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    def validate(self, check_files: bool = True) -> None:
        seen = set()
        for e in self.entries:
            if e.split not in SPLITS:
                raise ArgumentError(f"unknown split {e.split!r} for {e.path}")
            if e.path in seen:
                raise ArgumentError(f"{e.path} listed twice")
            seen.add(e.path)
            if check_files:
                p = self.root / e.path
                if not p.exists():
                    raise ArgumentError(f"manifest references missing file {p}")
                if read_smf(p).level != self.level:
                    raise ArgumentError(f"{p} is not at level {self.level}")


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported manifest version {doc.get('format_version')!r}")
    entries = [Entry(s["path"], s.get("age_weeks"), s["split"]) for s in doc["samples"]]
    return Manifest(doc["level"], entries, doc.get("normalization"), path.parent)


def split_counts(n: int) -> dict[str, int]:
    total = sum(SPLIT_RATIO)
    n_test = int(round(n * SPLIT_RATIO[1] / total))
    n_val = int(round(n * SPLIT_RATIO[2] / total))
    if n >= 3:
        n_test, n_val = max(n_test, 1), max(n_val, 1)
    else:
        n_test, n_val = 0, 0
    return {"train": n - n_test - n_val, "test": n_test, "val": n_val}


def assign_splits(n: int, seed: int) -> list[str]:
    counts = split_counts(n)
    labels = ["train"] * counts["train"] + ["test"] * counts["test"] + ["val"] * counts["val"]
    order = stream(seed, "split").permutation(n)
    out = [""] * n
    for label, i in zip(labels, order):
        out[int(i)] = label
    return out


def compute_normalization(manifest: Manifest) -> dict:
    """Scalar z-score constants over all values of the train split."""
    maps = manifest.load_maps("train")
    if not maps:
        raise ArgumentError("manifest has no training samples")
    vals = np.concatenate([m.values.astype(np.float64) for m in maps])
    std = float(vals.std())
    if std <= 0:
        raise ArgumentError("training data has zero variance")
    return {"mean": float(vals.mean()), "std": std}
