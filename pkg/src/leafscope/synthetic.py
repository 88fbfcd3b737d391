"""Generated class-per-directory corpora for smoke runs and tests.

Each class gets its own hue; images are a textured background with a
randomly placed ellipse, so the classes are separable by colour alone.
"""
from __future__ import annotations

import colorsys
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
from PIL import Image

from . import LEAF_CLASSES


def _class_image(class_id: int, num_classes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    hue = class_id / num_classes
    sat = rng.uniform(0.55, 0.9)
    val = rng.uniform(0.5, 0.85)
    fg = np.array(colorsys.hsv_to_rgb(hue, sat, val)) * 255
    bg = np.array(colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.15, 0.35)) * 255
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = bg
    center = tuple(int(v) for v in rng.integers(size // 3, 2 * size // 3, size=2))
    axes = (int(rng.integers(size // 4, size // 2)), int(rng.integers(size // 6, size // 3)))
    mask = np.zeros((size, size), dtype=np.uint8)
    cv2.ellipse(mask, center, axes, float(rng.uniform(0, 180)), 0, 360, 1, -1)
    img[mask.astype(bool)] = fg
    img += rng.normal(0, 8, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def make_synthetic_dataset(root: str | Path, class_names: Sequence[str] = LEAF_CLASSES,
                           per_class: int = 64, size: int = 240, seed: int = 0,
                           ext: str = "png") -> Path:
    root = Path(root)
    for cid, name in enumerate(class_names):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for k in range(per_class):
            rng = np.random.default_rng([seed, cid, k])
            Image.fromarray(_class_image(cid, len(class_names), size, rng)).save(d / f"{name}_{k:04d}.{ext}")
    return root


def make_blank_layout(root: str | Path, counts: dict[str, int], size: int = 4) -> Path:
    """Tiny constant images, for tests that only care about directory structure."""
    root = Path(root)
    pixel = Image.new("RGB", (size, size), (90, 140, 60))
    for name, n in counts.items():
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for k in range(n):
            pixel.save(d / f"{k:05d}.png")
    return root
