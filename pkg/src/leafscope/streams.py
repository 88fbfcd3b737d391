"""In-memory batch streams feeding the trainer.

Images are held at storage size as uint8 and cropped to the model input size
per batch: a seeded random crop (after optional real-time augmentation) for
training, a centre crop for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .augment import AugmentConfig, apply_record, draw_generator, sample_record
from .dataset import DatasetManifest
from .errors import DataError
from .imgproc import PreprocessConfig, cached_path, center_crop, load_image, preprocess_raw, random_crop


def load_split_images(manifest: DatasetManifest, indices: Sequence[int], config: PreprocessConfig,
                      cache_dir: str | Path | None = None) -> np.ndarray:
    """Preprocessed uint8 images (N, S, S, 3) for the given sample indices."""
    out = np.empty((len(indices), config.storage_size, config.storage_size, 3), dtype=np.uint8)
    for k, i in enumerate(indices):
        cached = cached_path(cache_dir, manifest.samples[i].relative_path) if cache_dir else None
        if cached is not None and cached.exists():
            out[k] = load_image(cached)
        else:
            out[k] = preprocess_raw(load_image(manifest.path_of(i)), config)
    return out


@dataclass
class BatchStream:
    images: np.ndarray  # (N, S, S, 3) uint8
    labels: np.ndarray
    batch_size: int = 32
    input_size: int = 224
    train: bool = False
    augment: AugmentConfig | None = None
    seed: int = 0
    sample_ids: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.labels))

    def __len__(self) -> int:
        return len(self.labels)

    def _prepare(self, k: int, epoch: int) -> np.ndarray:
        img = self.images[k]
        if not self.train:
            return center_crop(img, self.input_size)
        sid = int(self.sample_ids[k])
        seed = self.augment.seed if self.augment is not None else self.seed
        draw = draw_generator(seed, sid, epoch + 1)
        if self.augment is not None:
            img = apply_record(img, sample_record(self.augment, draw, sid))
        return random_crop(img, self.input_size, draw)

    def batches(self, epoch: int = 0) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        if len(self) == 0:
            raise DataError("data stream is empty")
        order = np.arange(len(self))
        if self.train:
            order = np.random.default_rng([self.seed, epoch]).permutation(len(self))
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            crops = np.stack([self._prepare(int(k), epoch) for k in idx]).astype(np.float32) / 255.0
            x = torch.from_numpy(np.ascontiguousarray(crops.transpose(0, 3, 1, 2)))
            yield x, torch.from_numpy(self.labels[idx])

    def eval_view(self) -> "BatchStream":
        """Same data, deterministic order and centre crops."""
        return BatchStream(self.images, self.labels, self.batch_size, self.input_size, False,
                           None, self.seed, self.sample_ids)
