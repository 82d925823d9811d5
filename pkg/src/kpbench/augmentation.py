"""Offline augmentation that keeps images and keypoints geometrically consistent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import IMAGE_SIZE, Dataset, Sample, concat

CENTER = (IMAGE_SIZE - 1) / 2.0  # 47.5, the middle of the pixel grid


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationSpec:
    rotation_degrees: tuple = (-15.0, 15.0)
    shift_pixels: tuple = (-8, 8)  # integer range, per axis
    brightness_factor: tuple = (0.7, 1.3)
    noise_sigma: tuple = (0.0, 12.0)
    per_sample_variants: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_degrees", "shift_pixels", "brightness_factor", "noise_sigma"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise AugmentationError(f"{name} must be a finite (low, high) range")
        if self.per_sample_variants < 0:
            raise AugmentationError("per_sample_variants must be >= 0")
        if self.noise_sigma[0] < 0 or self.brightness_factor[0] < 0:
            raise AugmentationError("noise sigma and brightness factor must be non-negative")

    @classmethod
    def symmetric(cls, rot=15.0, shift=8, bright=0.3, noise=12.0, variants=4, seed=0):
        return cls((-rot, rot), (-int(shift), int(shift)), (1.0 - bright, 1.0 + bright),
                   (0.0, noise), variants, seed)


def _in_frame(coords: np.ndarray) -> bool:
    return bool(np.all((coords >= 0) & (coords < IMAGE_SIZE)))


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional (x, y) with zeros outside the frame."""
    h, w = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros(xs.shape)
            vals[ok] = img[yi[ok], xi[ok]]
            out += wx * wy * vals
    return out


def rotate_points(coords: np.ndarray, theta_degrees: float) -> np.ndarray:
    """Rotate (x, y) pairs counter-clockwise as seen on screen (y points down)."""
    t = np.deg2rad(theta_degrees)
    c, s = np.cos(t), np.sin(t)
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2) - CENTER
    x = CENTER + pts[:, 0] * c + pts[:, 1] * s
    y = CENTER - pts[:, 0] * s + pts[:, 1] * c
    return np.stack([x, y], axis=1).reshape(np.shape(coords))


def rotate_sample(sample: Sample, theta_degrees: float) -> Optional[Sample]:
    """Rotate about the image centre; ``None`` if a keypoint leaves the frame."""
    coords = rotate_points(sample.coords, theta_degrees)
    if not _in_frame(coords[~np.isnan(coords)]):
        return None
    t = np.deg2rad(theta_degrees)
    c, s = np.cos(t), np.sin(t)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    # inverse map: output pixel -> source location
    xs = CENTER + (xx - CENTER) * c - (yy - CENTER) * s
    ys = CENTER + (xx - CENTER) * s + (yy - CENTER) * c
    img = _bilinear(sample.image.astype(np.float64), xs, ys)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Sample(img, coords, sample.image_id)


def shift_sample(sample: Sample, dx: int, dy: int) -> Optional[Sample]:
    """Translate by whole pixels, zero-filling the vacated border."""
    dx, dy = int(dx), int(dy)
    coords = sample.coords.copy()
    coords[0::2] += dx
    coords[1::2] += dy
    if not _in_frame(coords[~np.isnan(coords)]):
        return None
    n = IMAGE_SIZE
    img = np.zeros_like(sample.image)
    if abs(dx) < n and abs(dy) < n:
        img[max(dy, 0):n + min(dy, 0), max(dx, 0):n + min(dx, 0)] = \
            sample.image[max(-dy, 0):n + min(-dy, 0), max(-dx, 0):n + min(-dx, 0)]
    return Sample(img, coords, sample.image_id)


def adjust_brightness(sample: Sample, factor: float) -> Sample:
    img = np.clip(np.rint(sample.image.astype(np.float64) * factor), 0, 255).astype(np.uint8)
    return Sample(img, sample.coords, sample.image_id)


def add_gaussian_noise(sample: Sample, sigma: float, seed) -> Sample:
    if sigma < 0:
        raise AugmentationError("sigma must be >= 0")
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=sample.image.shape)
    img = np.clip(np.rint(sample.image + noise), 0, 255).astype(np.uint8)
    return Sample(img, sample.coords, sample.image_id)


def random_variant(sample: Sample, spec: AugmentationSpec, rng: np.random.Generator) -> Optional[Sample]:
    """One rotation + shift + brightness + noise draw; ``None`` when rejected."""
    theta = rng.uniform(*spec.rotation_degrees)
    dx, dy = rng.integers(spec.shift_pixels[0], spec.shift_pixels[1] + 1, size=2)
    factor = rng.uniform(*spec.brightness_factor)
    sigma = rng.uniform(*spec.noise_sigma)
    noise_seed = int(rng.integers(2 ** 63))
    out = rotate_sample(sample, theta)
    if out is None:
        return None
    out = shift_sample(out, dx, dy)
    if out is None:
        return None
    return add_gaussian_noise(adjust_brightness(out, factor), sigma, noise_seed)


def augment_offline(dataset: Dataset, spec: AugmentationSpec) -> Dataset:
    """Originals followed by the accepted variants, in sample order.

    Sample ``i`` draws from its own stream seeded by ``(spec.seed, i)``, so the
    result does not depend on processing order.
    """
    if np.isnan(dataset.coords).any():
        raise AugmentationError("augment_offline needs complete-case samples; apply complete_subset first")
    if spec.per_sample_variants == 0 or len(dataset) == 0:
        return dataset
    variants = []
    for i, sample in enumerate(dataset):
        rng = np.random.default_rng([spec.seed, i])
        for _ in range(spec.per_sample_variants):
            v = random_variant(sample, spec, rng)
            if v is not None:
                variants.append(v)
    return concat([dataset, Dataset.from_samples(variants)])
