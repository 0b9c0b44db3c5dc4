"""Datasets for saliency-style dense prediction.

``generate_synthetic`` draws smoothed-noise backgrounds with one to three
filled shapes (ellipse, rectangle, triangle) whose union is the ground-truth
mask. ``load_directory`` ingests ``images/<name>.<ext>`` / ``masks/<name>.<ext>``
pairs. Both split samples into train/validation/test by fixed fractions
(default 50/10/40).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import IngestionError

DEFAULT_FRACTIONS = (0.5, 0.1, 0.4)
SHAPES = ("ellipse", "rectangle", "triangle")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".pgm", ".ppm")
FG_BOUNDS = (0.05, 0.5)


@dataclass
class Sample:
    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    name: str = ""


@dataclass
class DatasetSplit:
    train: list[Sample]
    validation: list[Sample]
    test: list[Sample]
    provenance: str

    def split(self, name: str) -> list[Sample]:
        try:
            return {"train": self.train, "validation": self.validation, "val": self.validation, "test": self.test}[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None


def to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into NCHW float32 images and (N, 1, H, W) float32 targets."""
    x = np.stack([s.image for s in samples]).transpose(0, 3, 1, 2).astype(np.float32)
    y = np.stack([s.mask for s in samples])[:, None].astype(np.float32)
    return np.ascontiguousarray(x), y


def split_sizes(count: int, fractions=DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    """Train and validation take floor(count * fraction); test takes the rest."""
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = math.floor(count * fractions[0] + 1e-9)
    n_val = math.floor(count * fractions[1] + 1e-9)
    if count >= 3:
        # keep every split non-empty
        n_train = max(n_train, 1 if fractions[0] > 0 else 0)
        n_val = max(n_val, 1 if fractions[1] > 0 else 0)
        if fractions[2] > 0 and n_train + n_val >= count:
            n_train = count - n_val - 1
    return n_train, n_val, count - n_train - n_val


def _partition(samples, fractions, provenance):
    n_train, n_val, _ = split_sizes(len(samples), fractions)
    return DatasetSplit(
        samples[:n_train], samples[n_train : n_train + n_val], samples[n_train + n_val :], provenance
    )


# -- synthetic generator --------------------------------------------------------


def _shape_mask(rng, kind, h, w):
    """Boolean mask of one random shape lying fully inside the canvas."""
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "triangle":
        pts = np.stack([rng.uniform(0, w - 1, 3), rng.uniform(0, h - 1, 3)], axis=1)
        (x0, y0), (x1, y1), (x2, y2) = pts
        d = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(d) < 1e-9:
            return np.zeros((h, w), dtype=bool)
        a = ((y1 - y2) * (xx - x2) + (x2 - x1) * (yy - y2)) / d
        b = ((y2 - y0) * (xx - x2) + (x0 - x2) * (yy - y2)) / d
        return (a >= 0) & (b >= 0) & (a + b <= 1)
    rx = rng.uniform(0.08, 0.3) * w
    ry = rng.uniform(0.08, 0.3) * h
    cx = rng.uniform(rx, w - 1 - rx)
    cy = rng.uniform(ry, h - 1 - ry)
    if kind == "ellipse":
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    return (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)


def synthetic_sample(rng: np.random.Generator, height: int, width: int, channels: int = 3, name: str = "") -> Sample:
    noise = gaussian_filter(rng.normal(size=(height, width, channels)), sigma=(3, 3, 0))
    noise /= noise.std() + 1e-12
    base = rng.uniform(0.1, 0.4, size=channels)
    image = base + 0.06 * noise
    # shapes are redrawn until the foreground fraction is within bounds
    while True:
        n = int(rng.integers(1, 4))
        kinds = rng.choice(SHAPES, size=n)
        masks = [_shape_mask(rng, k, height, width) for k in kinds]
        union = np.logical_or.reduce(masks)
        frac = union.mean()
        if FG_BOUNDS[0] <= frac <= FG_BOUNDS[1] and all(m.any() for m in masks):
            break
    levels = rng.permutation(np.linspace(0.6, 0.9, 4))[:n]
    for m, level in zip(masks, levels):
        tint = rng.uniform(-0.08, 0.08, size=channels)
        shade = level + tint + 0.04 * rng.normal(size=(height, width, channels))
        image = np.where(m[..., None], shade, image)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(image, union.astype(np.uint8), name)


def generate_synthetic(seed, count, height, width, fractions=DEFAULT_FRACTIONS, channels=3) -> DatasetSplit:
    if count < 3:
        raise ValueError(f"count must be >= 3, got {count}")
    if height < 16 or width < 16:
        raise ValueError(f"height and width must be >= 16, got {height}x{width}")
    rng = np.random.default_rng(seed)
    digits = max(4, len(str(count - 1)))
    samples = [synthetic_sample(rng, height, width, channels, f"{i:0{digits}d}") for i in range(count)]
    return _partition(samples, fractions, f"synthetic seed={seed} count={count} size={height}x{width}")


def write_dataset(samples, root):
    """Write samples as 8-bit PNGs in the images/ + masks/ layout."""
    img_dir = os.path.join(root, "images")
    mask_dir = os.path.join(root, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    for s in samples:
        pixels = np.round(s.image * 255).astype(np.uint8)
        mode = "L" if pixels.shape[2] == 1 else "RGB"
        Image.fromarray(pixels[..., 0] if mode == "L" else pixels, mode=mode).save(
            os.path.join(img_dir, f"{s.name}.png")
        )
        Image.fromarray(s.mask.astype(np.uint8) * 255, mode="L").save(os.path.join(mask_dir, f"{s.name}.png"))


# -- directory ingester -----------------------------------------------------------


def _index(directory):
    if not os.path.isdir(directory):
        raise IngestionError(f"not a directory: {directory}")
    found = {}
    for fname in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(fname)
        if ext.lower() in IMAGE_EXTENSIONS:
            found[stem] = os.path.join(directory, fname)
    return found


def _read(path, kind):
    try:
        with Image.open(path) as im:
            im.load()
            if kind == "mask":
                arr = np.asarray(im.convert("L"))
                return (arr >= 128).astype(np.uint8)
            if im.mode == "L":
                arr = np.asarray(im)[..., None]
            elif im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise IngestionError(f"{path}: unsupported image mode {im.mode} (need 8-bit grayscale or RGB)")
    except IngestionError:
        raise
    except Exception as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    return (arr.astype(np.float32) / 255.0)


def load_directory(images_path, masks_path, fractions=DEFAULT_FRACTIONS) -> DatasetSplit:
    images = _index(images_path)
    masks = _index(masks_path)
    unmatched = sorted(set(images) ^ set(masks))
    if unmatched:
        raise IngestionError(f"unmatched basenames: {', '.join(unmatched)}")
    samples = []
    for name in sorted(images):
        image = _read(images[name], "image")
        mask = _read(masks[name], "mask")
        if image.shape[:2] != mask.shape:
            raise IngestionError(f"{name}: image size {image.shape[:2]} != mask size {mask.shape}")
        samples.append(Sample(image, mask, name))
    if not samples:
        raise IngestionError(f"no images found in {images_path}")
    return _partition(samples, fractions, f"directory images={images_path} masks={masks_path}")
