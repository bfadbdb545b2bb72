"""Dataset loading, stratified folds, resampling, and augmentation.

Images load as float32 in [0, 1] (a plain 1/255 scale; no mean/std
normalization anywhere). Labels are the class letters in alphabetical
order: A=0, G=1, O=2, R=3.

Resampling uses half-pixel-centered bilinear interpolation with source
coordinates clamped at the border, both for resizes and for the inverse-map
rotation, so values never leave [0, 1].
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

CLASS_TO_INDEX = {"A": 0, "G": 1, "O": 2, "R": 3}
INDEX_TO_CLASS = {v: k for k, v in CLASS_TO_INDEX.items()}


@dataclass
class ManifestEntry:
    path: str
    kudo_class: str
    material: str
    orientation: str
    seed: int


def read_manifest(manifest_path: str) -> list:
    entries = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "class", "material", "orientation", "seed"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{manifest_path}: expected columns {sorted(required)}")
        for row in reader:
            if row["class"] not in CLASS_TO_INDEX:
                raise DataError(f"{manifest_path}: unknown class {row['class']!r}")
            entries.append(ManifestEntry(row["path"], row["class"],
                                         row["material"], row["orientation"],
                                         int(row["seed"])))
    if not entries:
        raise DataError(f"{manifest_path}: empty manifest")
    return entries


def load_image(path: str) -> np.ndarray:
    """PNG to float32 (3, h, w) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return (arr / 255.0).transpose(2, 0, 1)


def _sample_coords(x: np.ndarray, size: int) -> tuple:
    """Clamped coordinates split into lower/upper index and blend weight."""
    x = np.clip(x, 0.0, size - 1.0)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, x - i0


def resize_bilinear(image: np.ndarray, target: tuple) -> np.ndarray:
    """Separable bilinear resize of a (..., h, w) array to (th, tw)."""
    th, tw = target
    if th < 1 or tw < 1:
        raise ConfigError(f"bad resize target {target}")
    h, w = image.shape[-2], image.shape[-1]
    if (h, w) == (th, tw):
        return image.copy()
    # Half-pixel centers: output i samples source (i + 0.5) * scale - 0.5.
    r0, r1, wr = _sample_coords(
        (np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5, h)
    c0, c1, wc = _sample_coords(
        (np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5, w)
    wr = wr.reshape(-1, 1)
    rows = image[..., r0, :] * (1.0 - wr) + image[..., r1, :] * wr
    out = rows[..., :, c0] * (1.0 - wc) + rows[..., :, c1] * wc
    return out.astype(image.dtype, copy=False)


def rotate_bilinear(image: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate (..., h, w) about the frame center; inverse-map bilinear with
    border clamp (edge pixels extend outward)."""
    h, w = image.shape[-2], image.shape[-1]
    a = np.deg2rad(angle_deg)
    cos_a, sin_a = np.cos(a), np.sin(a)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    # Inverse map: sample where the output pixel came from.
    y0, y1, wy = _sample_coords(cos_a * dy + sin_a * dx + cy, h)
    x0, x1, wx = _sample_coords(-sin_a * dy + cos_a * dx + cx, w)
    top = image[..., y0, x0] * (1.0 - wx) + image[..., y0, x1] * wx
    bot = image[..., y1, x0] * (1.0 - wx) + image[..., y1, x1] * wx
    out = top * (1.0 - wy) + bot * wy
    return out.astype(image.dtype, copy=False)


@dataclass
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class FoldPlan:
    folds: list
    seed: int
    k: int


def stratified_kfold(labels, k: int = 5, seed: int = 0,
                     val_fraction: float = 0.2) -> FoldPlan:
    """Per-class shuffled k-fold with a nested stratified train/val split.

    Each class is shuffled once and cut into k chunks whose sizes differ by
    at most one (larger chunks first); fold f tests on chunk f and splits
    the remaining pool per class into train/val at (1 - val_fraction) /
    val_fraction.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ConfigError(f"need k >= 2 folds, got {k}")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    class_chunks = {}
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        if len(idx) < k:
            raise DataError(f"class {c} has {len(idx)} samples, fewer than k={k}")
        idx = rng.permutation(idx)
        base, extra = divmod(len(idx), k)
        chunks, start = [], 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            chunks.append(idx[start:start + size])
            start += size
        class_chunks[c] = chunks
    folds = []
    for f in range(k):
        test, train, val = [], [], []
        for c, chunks in class_chunks.items():
            test.append(chunks[f])
            pool = np.concatenate([chunks[g] for g in range(k) if g != f])
            n_val = int(len(pool) * val_fraction + 0.5)
            val.append(pool[:n_val])
            train.append(pool[n_val:])
        folds.append(Fold(np.concatenate(train), np.concatenate(val),
                          np.concatenate(test)))
    return FoldPlan(folds, seed, k)


class Dataset:
    """Manifest plus all images resident in memory at the working size."""

    def __init__(self, manifest_path: str, image_size: int = None):
        self.entries = read_manifest(manifest_path)
        root = os.path.dirname(os.path.abspath(manifest_path))
        imgs = []
        for e in self.entries:
            img = load_image(os.path.join(root, e.path))
            if image_size is not None and img.shape[-2:] != (image_size, image_size):
                img = resize_bilinear(img, (image_size, image_size))
            imgs.append(img)
        shapes = {i.shape for i in imgs}
        if len(shapes) != 1:
            raise DataError(f"inconsistent image shapes in manifest: {shapes}")
        self.images = np.stack(imgs).astype(np.float32)
        self.labels = np.array([CLASS_TO_INDEX[e.kudo_class] for e in self.entries])

    def __len__(self):
        return len(self.entries)


@dataclass
class AugmentConfig:
    probability: float = 0.5          # independent coin per transform
    crop_area_range: tuple = (0.85, 1.0)
    rotation_range_deg: tuple = (-45.0, 45.0)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("probability must lie in [0, 1]")
        lo, hi = self.crop_area_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError("crop_area_range must satisfy 0 < lo <= hi <= 1")


@dataclass
class AugmentPlan:
    crop: tuple = None       # (top, left, side)
    hflip: bool = False
    vflip: bool = False
    angle: float = None


def draw_augment_plan(shape, config: AugmentConfig, rng) -> AugmentPlan:
    """Flip four independent coins and draw any needed parameters."""
    h, w = shape[-2], shape[-1]
    coins = rng.random(4) < config.probability
    plan = AugmentPlan()
    if coins[0]:
        area = rng.uniform(*config.crop_area_range)
        side = max(1, int(round(min(h, w) * np.sqrt(area))))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        plan.crop = (top, left, side)
    plan.hflip = bool(coins[1])
    plan.vflip = bool(coins[2])
    if coins[3]:
        plan.angle = float(rng.uniform(*config.rotation_range_deg))
    return plan


def apply_augment_plan(image: np.ndarray, plan: AugmentPlan) -> np.ndarray:
    """Crop-and-resize, flips, then rotation. Size and range are preserved."""
    h, w = image.shape[-2], image.shape[-1]
    out = image
    if plan.crop is not None:
        top, left, side = plan.crop
        out = resize_bilinear(out[..., top:top + side, left:left + side], (h, w))
    if plan.hflip:
        out = out[..., :, ::-1]
    if plan.vflip:
        out = out[..., ::-1, :]
    if plan.angle is not None:
        out = rotate_bilinear(out, plan.angle)
    return np.ascontiguousarray(out) if out is not image else image.copy()


def augment_sample(image: np.ndarray, config: AugmentConfig, rng) -> np.ndarray:
    return apply_augment_plan(image, draw_augment_plan(image.shape, config, rng))


def batch_iter(images: np.ndarray, labels: np.ndarray, indices,
               batch_size: int, shuffle_seed: int = None,
               augment: AugmentConfig = None):
    """Yield (batch, labels) covering ``indices`` once; the tail batch may
    be short. A seed shuffles the order and drives augmentation draws."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    indices = np.asarray(indices)
    rng = None
    if shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        indices = rng.permutation(indices)
    if augment is not None and rng is None:
        raise ConfigError("augmentation needs a shuffle_seed for its draws")
    for start in range(0, len(indices), batch_size):
        sel = indices[start:start + batch_size]
        batch = images[sel]
        if augment is not None:
            batch = np.stack([augment_sample(img, augment, rng) for img in batch])
        yield batch, labels[sel]
