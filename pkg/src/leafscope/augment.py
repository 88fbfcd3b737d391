"""Seeded random augmentation and offline expansion of the training split.

Every augmented copy draws its parameters from a generator seeded by
``(seed, sample_id, copy_index)``, so results do not depend on the order in
which samples are processed. Real-time augmentation during training uses the
same derivation with ``copy_index = epoch + 1``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import cv2
import numpy as np

from .dataset import DatasetManifest, SplitAssignment
from .errors import ConfigError, StateError
from .imgproc import as_image, save_image


@dataclass(frozen=True)
class AugmentConfig:
    max_rotation: float = 30.0
    horizontal_flip: bool = True
    vertical_flip: bool = True
    zoom_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (0.8, 1.2)
    multiplier: int = 6
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "zoom_range", tuple(float(v) for v in self.zoom_range))
        object.__setattr__(self, "brightness_range", tuple(float(v) for v in self.brightness_range))
        self.validate()

    def validate(self) -> None:
        if not 0 <= self.max_rotation <= 180:
            raise ConfigError(f"max_rotation must be in [0, 180], got {self.max_rotation}")
        for name in ("zoom_range", "brightness_range"):
            rng = getattr(self, name)
            if len(rng) != 2 or not 0 < rng[0] <= rng[1]:
                raise ConfigError(f"{name} must satisfy 0 < low <= high, got {rng}")
        if self.multiplier < 0:
            raise ConfigError(f"multiplier must be >= 0, got {self.multiplier}")

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentConfig":
        return cls(0.0, False, False, (1.0, 1.0), (1.0, 1.0), 0, seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["zoom_range"] = list(self.zoom_range)
        d["brightness_range"] = list(self.brightness_range)
        return d


@dataclass(frozen=True)
class AugmentRecord:
    source_sample_id: int
    rotation: float
    h_flip: bool
    v_flip: bool
    zoom: float
    brightness: float

    def within(self, config: AugmentConfig) -> bool:
        zl, zh = config.zoom_range
        bl, bh = config.brightness_range
        return (
            -config.max_rotation <= self.rotation <= config.max_rotation
            and zl <= self.zoom <= zh
            and bl <= self.brightness <= bh
            and (config.horizontal_flip or not self.h_flip)
            and (config.vertical_flip or not self.v_flip)
        )


def draw_generator(seed: int, sample_id: int, copy_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, sample_id, copy_index])


def sample_record(config: AugmentConfig, draw: np.random.Generator,
                  source_sample_id: int = -1) -> AugmentRecord:
    # fixed draw order; disabled flips still consume a draw to keep streams aligned
    rotation = float(draw.uniform(-config.max_rotation, config.max_rotation))
    h_flip = bool(draw.random() < 0.5) and config.horizontal_flip
    v_flip = bool(draw.random() < 0.5) and config.vertical_flip
    zoom = float(draw.uniform(*config.zoom_range))
    brightness = float(draw.uniform(*config.brightness_range))
    return AugmentRecord(source_sample_id, rotation, h_flip, v_flip, zoom, brightness)


def augment_image(image, config: AugmentConfig, draw: np.random.Generator,
                  source_sample_id: int = -1) -> tuple[np.ndarray, AugmentRecord]:
    img = as_image(image)
    record = sample_record(config, draw, source_sample_id)
    return apply_record(img, record), record


def apply_record(image, record: AugmentRecord) -> np.ndarray:
    img = as_image(image)
    h, w, c = img.shape
    out = img
    if record.rotation != 0.0 or record.zoom != 1.0:
        m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), record.rotation, record.zoom)
        out = cv2.warpAffine(out, m, (w, h), flags=cv2.INTER_LINEAR,
                             borderMode=cv2.BORDER_REPLICATE).reshape(h, w, c)
    if record.h_flip:
        out = out[:, ::-1]
    if record.v_flip:
        out = out[::-1]
    if record.brightness != 1.0:
        out = np.clip(np.rint(out.astype(np.float64) * record.brightness), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class AugmentedSample:
    source_sample_id: int
    copy_index: int  # 0 is the untouched original
    record: AugmentRecord | None


@dataclass(frozen=True)
class AugmentedSet:
    config: AugmentConfig
    entries: tuple[AugmentedSample, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def records(self) -> list[AugmentRecord]:
        return [e.record for e in self.entries if e.record is not None]

    def render(self, index: int, load: Callable[[int], np.ndarray]) -> np.ndarray:
        """Produce the pixels of entry ``index`` given a loader for source images."""
        entry = self.entries[index]
        img = load(entry.source_sample_id)
        if entry.record is None:
            return as_image(img).copy()
        return apply_record(img, entry.record)

    def log(self) -> list[dict]:
        return [
            {"source_sample_id": e.source_sample_id, "copy_index": e.copy_index, **asdict(e.record)}
            for e in self.entries if e.record is not None
        ]

    def materialize(self, manifest: DatasetManifest, load: Callable[[int], np.ndarray],
                    out_dir: str | Path) -> Path:
        """Write every entry as a PNG plus ``augment_log.json``."""
        out_dir = Path(out_dir)
        for i, entry in enumerate(self.entries):
            sample = manifest.samples[entry.source_sample_id]
            stem = Path(sample.relative_path).with_suffix("")
            save_image(self.render(i, load), out_dir / f"{stem}__aug{entry.copy_index}.png")
        (out_dir / "augment_log.json").write_text(
            json.dumps({"config": self.config.to_dict(), "records": self.log()}, indent=1) + "\n"
        )
        return out_dir


def expand_training_set(manifest: DatasetManifest, split: SplitAssignment | None,
                        config: AugmentConfig, include_test: bool = False) -> AugmentedSet:
    """Originals plus ``multiplier`` augmented copies of every training sample.

    ``include_test`` additionally expands the test partition, which mimics an
    augmented evaluation pool; it is off by default.
    """
    if split is None or not (split.train_ids or split.test_ids):
        raise StateError("split is unassigned; run stratified_split before expanding")
    sources = list(split.train_ids)
    if include_test:
        sources += list(split.test_ids)
    n = len(manifest.samples)
    entries = []
    for sid in sources:
        if not 0 <= sid < n:
            raise StateError(f"split refers to sample {sid}, manifest has {n}")
        entries.append(AugmentedSample(sid, 0, None))
        for k in range(1, config.multiplier + 1):
            entries.append(AugmentedSample(sid, k, sample_record(config, draw_generator(config.seed, sid, k), sid)))
    return AugmentedSet(config, tuple(entries))
