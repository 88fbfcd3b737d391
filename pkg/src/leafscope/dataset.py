"""Corpus discovery, label encoding and deterministic stratified splitting.

The expected layout is ``<root>/<class_name>/<image files>``. Class ids are
the positions of the class names after a lexicographic sort.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DatasetError, LabelError, StateError

IMAGE_EXTENSIONS = frozenset({".jpg", ".jpeg", ".png", ".bmp"})
SPLITS = ("train", "val", "test", "unassigned")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ImageSample:
    relative_path: str
    class_id: int
    class_name: str
    split: str = "unassigned"


@dataclass(frozen=True)
class DatasetManifest:
    root_path: Path
    class_names: tuple[str, ...]
    samples: tuple[ImageSample, ...]
    created_seed: int = 0
    ratio: float | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for s in self.samples:
            counts[s.class_id] += 1
        return counts

    def indices_of(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.samples) if s.split == split]

    def labels(self, indices: Iterable[int] | None = None) -> np.ndarray:
        if indices is None:
            indices = range(len(self.samples))
        return np.array([self.samples[i].class_id for i in indices], dtype=np.int64)

    def path_of(self, index: int) -> Path:
        return self.root_path / self.samples[index].relative_path

    def with_split(self, split: "SplitAssignment") -> "DatasetManifest":
        """Return a copy whose samples carry the split labels of ``split``."""
        n = len(self.samples)
        tags = ["unassigned"] * n
        for name, ids in (("train", split.train_ids), ("val", split.val_ids), ("test", split.test_ids)):
            for i in ids:
                if not 0 <= i < n:
                    raise StateError(f"split refers to sample {i}, manifest has {n}")
                tags[i] = name
        samples = tuple(replace(s, split=t) for s, t in zip(self.samples, tags))
        return replace(self, samples=samples, created_seed=split.seed, ratio=split.ratio)

    def split_assignment(self) -> "SplitAssignment":
        """Recover the split stored in the sample tags."""
        if any(s.split == "unassigned" for s in self.samples):
            raise StateError("manifest has unassigned samples; run stratified_split first")
        return SplitAssignment(
            ratio=self.ratio if self.ratio is not None else 0.0,
            seed=self.created_seed,
            train_ids=tuple(self.indices_of("train")),
            test_ids=tuple(self.indices_of("test")),
            val_ids=tuple(self.indices_of("val")),
        )

    # --- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "root": str(self.root_path),
            "classes": list(self.class_names),
            "samples": [
                {"path": s.relative_path, "class_id": s.class_id, "split": s.split}
                for s in self.samples
            ],
            "seed": self.created_seed,
            "ratio": self.ratio,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetManifest":
        if doc.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version {doc.get('version')!r}")
        names = tuple(doc["classes"])
        samples = []
        for entry in doc["samples"]:
            cid = int(entry["class_id"])
            if not 0 <= cid < len(names):
                raise DatasetError(f"sample {entry['path']!r} has class id {cid} out of range")
            split = entry.get("split", "unassigned")
            if split not in SPLITS:
                raise DatasetError(f"sample {entry['path']!r} has unknown split {split!r}")
            samples.append(ImageSample(entry["path"], cid, names[cid], split))
        return cls(Path(doc["root"]), names, tuple(samples), int(doc.get("seed", 0)), doc.get("ratio"))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        """Content hash used to tie run metadata to a specific corpus and split."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class SplitAssignment:
    ratio: float
    seed: int
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    val_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class LabelMap:
    names: tuple[str, ...]
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LabelError(f"unknown class name {name!r}") from None

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise LabelError(f"class id {class_id} outside [0, {len(self.names)})")
        return self.names[class_id]

    def one_hot(self, class_id: int) -> np.ndarray:
        return one_hot(class_id, len(self.names))


def one_hot(class_id: int, num_classes: int) -> np.ndarray:
    if not 0 <= class_id < num_classes:
        raise LabelError(f"class id {class_id} outside [0, {num_classes})")
    vec = np.zeros(num_classes, dtype=np.float64)
    vec[class_id] = 1.0
    return vec


def encode_labels(class_names: Sequence[str]) -> LabelMap:
    names = tuple(class_names)
    if any(not n for n in names):
        raise ConfigError("class names must be non-empty")
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate class names: {dupes}")
    return LabelMap(names, {n: i for i, n in enumerate(names)})


def scan_dataset(root_path: str | Path) -> DatasetManifest:
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist or is not a directory")
    class_names = tuple(sorted(p.name for p in root.iterdir() if p.is_dir()))
    if not class_names:
        raise DatasetError(f"no class subdirectories under {root}")
    samples: list[ImageSample] = []
    for cid, name in enumerate(class_names):
        files = sorted(
            p.name for p in (root / name).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise DatasetError(f"class directory {root / name} contains no images")
        samples.extend(ImageSample(f"{name}/{f}", cid, name) for f in files)
    return DatasetManifest(root, class_names, tuple(samples))


def stratified_split(
    manifest: DatasetManifest, ratio: float, seed: int, val_ratio: float = 0.0
) -> SplitAssignment:
    """Per-class seeded shuffle, then floor(ratio * n) to train.

    With ``val_ratio > 0`` a further floor(val_ratio * n) per class goes to a
    validation partition; the remainder always lands in test.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    if not 0.0 <= val_ratio < 1.0 or ratio + val_ratio >= 1.0:
        raise ConfigError(f"val_ratio {val_ratio} leaves no room for a test partition")
    by_class: list[list[int]] = [[] for _ in manifest.class_names]
    for i, s in enumerate(manifest.samples):
        by_class[s.class_id].append(i)
    train, val, test = [], [], []
    for cid, ids in enumerate(by_class):
        if not ids:
            raise DatasetError(f"class {manifest.class_names[cid]!r} has no samples")
        rng = np.random.default_rng([seed, cid])
        order = [ids[j] for j in rng.permutation(len(ids))]
        n_train = math.floor(ratio * len(ids) + 1e-9)  # guards 0.29 * 100 -> 28.999...
        n_val = math.floor(val_ratio * len(ids) + 1e-9)
        train.extend(order[:n_train])
        val.extend(order[n_train:n_train + n_val])
        test.extend(order[n_train + n_val:])
    return SplitAssignment(ratio, seed, tuple(sorted(train)), tuple(sorted(test)), tuple(sorted(val)))
