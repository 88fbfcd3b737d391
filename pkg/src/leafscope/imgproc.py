"""Deterministic per-image preprocessing.

Images are ``uint8`` numpy arrays shaped ``(H, W, C)`` with ``C`` in {1, 3}
and RGB channel order. The composed pipeline is

    gaussian_blur -> clahe -> resize(storage_size) -> normalize

and consumes no randomness.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import ConfigError, ShapeError

N_BINS = 256


@dataclass(frozen=True)
class PreprocessConfig:
    blur_kernel: int = 3
    blur_sigma: float = 1.0
    clahe_clip_limit: float = 2.0
    clahe_tile_grid: tuple[int, int] = (8, 8)
    storage_size: int = 240
    model_input_size: int = 224

    def __post_init__(self):
        object.__setattr__(self, "clahe_tile_grid", tuple(int(v) for v in self.clahe_tile_grid))
        self.validate()

    def validate(self) -> None:
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ConfigError(f"blur_kernel must be odd and >= 1, got {self.blur_kernel}")
        if self.blur_sigma <= 0:
            raise ConfigError(f"blur_sigma must be > 0, got {self.blur_sigma}")
        if self.clahe_clip_limit <= 0:
            raise ConfigError(f"clahe_clip_limit must be > 0, got {self.clahe_clip_limit}")
        if len(self.clahe_tile_grid) != 2 or min(self.clahe_tile_grid) < 1:
            raise ConfigError(f"clahe_tile_grid must be two counts >= 1, got {self.clahe_tile_grid}")
        if self.storage_size < 1 or self.model_input_size < 1:
            raise ConfigError("image sizes must be >= 1")
        if self.model_input_size > self.storage_size:
            raise ConfigError(
                f"model_input_size {self.model_input_size} exceeds storage_size {self.storage_size}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clahe_tile_grid"] = list(self.clahe_tile_grid)
        return d


def as_image(pixels) -> np.ndarray:
    """Validate and return an ``(H, W, C)`` uint8 view; 2-D input gains a channel axis."""
    img = np.asarray(pixels)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected an H x W x C image with C in {{1, 3}}, got shape {img.shape}")
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255):
            raise ShapeError("pixel intensities must lie in [0, 255]")
        img = img.astype(np.uint8)
    return img


def _restore_channels(out: np.ndarray, channels: int) -> np.ndarray:
    # OpenCV drops a trailing singleton channel
    return out.reshape(out.shape[0], out.shape[1], channels)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_image(pixels: np.ndarray, path: str | Path) -> None:
    img = as_image(pixels)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img[:, :, 0] if img.shape[2] == 1 else img).save(path)


def gaussian_blur(image, kernel: int = 3, sigma: float = 1.0) -> np.ndarray:
    img = as_image(image)
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"gaussian kernel size must be odd and >= 1, got {kernel}")
    if sigma <= 0:
        raise ConfigError(f"gaussian sigma must be > 0, got {sigma}")
    out = cv2.GaussianBlur(img, (kernel, kernel), sigmaX=sigma, sigmaY=sigma,
                           borderType=cv2.BORDER_REPLICATE)
    return _restore_channels(out, img.shape[2])


# --- CLAHE -----------------------------------------------------------------

def _clipped_tile_lut(tile: np.ndarray, clip: int) -> np.ndarray:
    hist = np.bincount(tile.ravel(), minlength=N_BINS).astype(np.int64)
    excess = int(np.maximum(hist - clip, 0).sum())
    hist = np.minimum(hist, clip)
    # spread the clipped mass evenly, leftover counts go to evenly spaced bins
    hist += excess // N_BINS
    residual = excess % N_BINS
    if residual:
        step = max(N_BINS // residual, 1)
        hist[0:step * residual:step][:residual] += 1
    cdf = np.cumsum(hist)
    lut = np.rint(cdf * (255.0 / tile.size))
    return np.clip(lut, 0, 255).astype(np.uint8)


def _clahe_gray(gray: np.ndarray, clip_limit: float, grid: tuple[int, int]) -> np.ndarray:
    h, w = gray.shape
    rows, cols = grid
    pad_h = (-h) % rows
    pad_w = (-w) % cols
    ext = cv2.copyMakeBorder(gray, 0, pad_h, 0, pad_w, cv2.BORDER_REFLECT_101) if (pad_h or pad_w) else gray
    th, tw = ext.shape[0] // rows, ext.shape[1] // cols
    area = th * tw
    clip = max(int(clip_limit * area / N_BINS), 1)

    luts = np.empty((rows, cols, N_BINS), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            luts[r, c] = _clipped_tile_lut(ext[r * th:(r + 1) * th, c * tw:(c + 1) * tw], clip)

    # bilinear blend between the mappings of the four nearest tile centres
    yf = np.arange(h) / th - 0.5
    xf = np.arange(w) / tw - 0.5
    y1 = np.floor(yf).astype(int)
    x1 = np.floor(xf).astype(int)
    ya = (yf - y1)[:, None]
    xa = (xf - x1)[None, :]
    y2 = np.minimum(y1 + 1, rows - 1)
    x2 = np.minimum(x1 + 1, cols - 1)
    y1 = np.maximum(y1, 0)
    x1 = np.maximum(x1, 0)

    v = gray.astype(np.intp)
    Y1, X1 = y1[:, None], x1[None, :]
    Y2, X2 = y2[:, None], x2[None, :]
    top = luts[Y1, X1, v] * (1 - xa) + luts[Y1, X2, v] * xa
    bottom = luts[Y2, X1, v] * (1 - xa) + luts[Y2, X2, v] * xa
    res = top * (1 - ya) + bottom * ya
    return np.clip(np.rint(res), 0, 255).astype(np.uint8)


def clahe(image, clip_limit: float = 2.0, tile_grid: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Colour images are equalized on the L channel of CIELAB so chroma is
    left untouched.
    """
    img = as_image(image)
    rows, cols = (int(v) for v in tile_grid)
    if clip_limit <= 0:
        raise ConfigError(f"clip_limit must be > 0, got {clip_limit}")
    if rows < 1 or cols < 1:
        raise ConfigError(f"tile grid must be >= 1 in both directions, got {tile_grid}")
    if rows > img.shape[0] or cols > img.shape[1]:
        raise ConfigError(f"tile grid {rows}x{cols} is larger than the {img.shape[0]}x{img.shape[1]} image")
    if img.shape[2] == 1:
        return _clahe_gray(img[:, :, 0], clip_limit, (rows, cols))[:, :, None]
    lab = cv2.cvtColor(img, cv2.COLOR_RGB2LAB)
    lab[:, :, 0] = _clahe_gray(lab[:, :, 0], clip_limit, (rows, cols))
    return cv2.cvtColor(lab, cv2.COLOR_LAB2RGB)


def resize(image, target: int) -> np.ndarray:
    img = as_image(image)
    if target < 1:
        raise ConfigError(f"resize target must be >= 1, got {target}")
    if img.shape[0] == target and img.shape[1] == target:
        return img.copy()
    out = cv2.resize(img, (target, target), interpolation=cv2.INTER_LINEAR)
    return _restore_channels(out, img.shape[2])


def normalize(image) -> np.ndarray:
    return as_image(image).astype(np.float64) / 255.0


def preprocess_raw(image, config: PreprocessConfig) -> np.ndarray:
    """All deterministic stages except the final scaling to [0, 1]."""
    img = gaussian_blur(image, config.blur_kernel, config.blur_sigma)
    img = clahe(img, config.clahe_clip_limit, config.clahe_tile_grid)
    return resize(img, config.storage_size)


def preprocess(image, config: PreprocessConfig) -> np.ndarray:
    return normalize(preprocess_raw(image, config))


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    if size > h or size > w:
        raise ShapeError(f"crop {size} larger than image {h}x{w}")
    top = (h - size) // 2
    left = (w - size) // 2
    return image[top:top + size, left:left + size]


def random_crop(image: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[:2]
    if size > h or size > w:
        raise ShapeError(f"crop {size} larger than image {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return image[top:top + size, left:left + size]


def cache_preprocessed(manifest, config: PreprocessConfig, cache_dir: str | Path) -> Path:
    """Write ``preprocess_raw`` output for every sample, mirroring the dataset layout."""
    cache_dir = Path(cache_dir)
    for i, sample in enumerate(manifest.samples):
        dest = (cache_dir / sample.relative_path).with_suffix(".png")
        if not dest.exists():
            save_image(preprocess_raw(load_image(manifest.path_of(i)), config), dest)
    return cache_dir


def cached_path(cache_dir: str | Path, relative_path: str) -> Path:
    return (Path(cache_dir) / relative_path).with_suffix(".png")

