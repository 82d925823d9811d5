"""Keypoint CSV ingestion, missingness profiling and a synthetic face generator.

Keypoints use continuous pixel coordinates with the origin at the top-left
corner, x to the right and y downward. Missing coordinates are stored as NaN.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, TextIO

import numpy as np

IMAGE_SIZE = 96
N_PIXELS = IMAGE_SIZE * IMAGE_SIZE
N_KEYPOINTS = 15
N_COORDS = 2 * N_KEYPOINTS

LANDMARKS = (
    "left_eye_center",
    "right_eye_center",
    "left_eye_inner_corner",
    "left_eye_outer_corner",
    "right_eye_inner_corner",
    "right_eye_outer_corner",
    "left_eyebrow_inner_end",
    "left_eyebrow_outer_end",
    "right_eyebrow_inner_end",
    "right_eyebrow_outer_end",
    "nose_tip",
    "mouth_left_corner",
    "mouth_right_corner",
    "mouth_center_top_lip",
    "mouth_center_bottom_lip",
)
KEYPOINT_COLUMNS = tuple(f"{name}_{axis}" for name in LANDMARKS for axis in ("x", "y"))

# landmarks the public training file labels on almost every row
CORE_LANDMARKS = (0, 1, 10, 14)

DATA_DIR_ENV = "KPBENCH_DATA_DIR"


class DatasetFormatError(ValueError):
    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # (96, 96) uint8
    coords: np.ndarray  # (30,) float64, NaN where missing
    image_id: Optional[int] = None

    @property
    def keypoints(self) -> list[Optional[tuple[float, float]]]:
        pts = self.coords.reshape(N_KEYPOINTS, 2)
        return [None if np.isnan(p).any() else (float(p[0]), float(p[1])) for p in pts]

    @property
    def complete(self) -> bool:
        return not np.isnan(self.coords).any()


@dataclass(frozen=True)
class Dataset:
    """Row-ordered samples stored as stacked arrays.

    ``images`` is (N, 96, 96) uint8 and ``coords`` is (N, 30) float64 with NaN
    for missing values. Row order is the source-file order.
    """

    images: np.ndarray
    coords: np.ndarray
    keypoint_names: tuple = KEYPOINT_COLUMNS
    image_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.images.ndim != 3 or self.images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
            raise DatasetFormatError(f"images must be (N, 96, 96), got {self.images.shape}")
        if self.coords.shape != (self.images.shape[0], N_COORDS):
            raise DatasetFormatError(f"coords must be (N, 30), got {self.coords.shape}")
        if len(self.keypoint_names) != N_COORDS:
            raise DatasetFormatError("keypoint_names must have 30 entries")

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, i: int) -> Sample:
        ids = self.image_ids
        return Sample(self.images[i], self.coords[i], None if ids is None else int(ids[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    @property
    def mask(self) -> np.ndarray:
        """1.0 where a coordinate is present."""
        return (~np.isnan(self.coords)).astype(np.float32)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        ids = None if self.image_ids is None else self.image_ids[index]
        return Dataset(self.images[index], self.coords[index], self.keypoint_names, ids)

    def with_coords(self, coords: np.ndarray) -> "Dataset":
        return Dataset(self.images, coords, self.keypoint_names, self.image_ids)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.keypoint_names == other.keypoint_names
            and np.array_equal(self.images, other.images)
            and np.array_equal(self.coords, other.coords, equal_nan=True)
        )

    @staticmethod
    def empty() -> "Dataset":
        return Dataset(np.zeros((0, IMAGE_SIZE, IMAGE_SIZE), np.uint8), np.zeros((0, N_COORDS)))

    @staticmethod
    def from_samples(samples: Iterable[Sample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            return Dataset.empty()
        return Dataset(
            np.stack([s.image for s in samples]).astype(np.uint8),
            np.stack([s.coords for s in samples]).astype(np.float64),
        )


def concat(parts: Iterable[Dataset]) -> Dataset:
    parts = [p for p in parts if len(p)]
    if not parts:
        return Dataset.empty()
    return Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.coords for p in parts]))


@dataclass(frozen=True)
class NullProfile:
    total: int
    complete: int
    with_missing: int
    per_column_missing: tuple = field(default_factory=tuple)

    @property
    def complete_fraction(self) -> float:
        return self.complete / self.total if self.total else 0.0


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _parse_image(cell: str, row: int) -> np.ndarray:
    tokens = cell.split()
    if len(tokens) != N_PIXELS:
        raise DatasetFormatError(f"Image has {len(tokens)} pixels, expected {N_PIXELS}", row)
    try:
        pixels = np.array(tokens, dtype=np.int64)
    except ValueError:
        bad = next(t for t in tokens if not t.lstrip("-").isdigit())
        raise DatasetFormatError(f"non-integer pixel {bad!r}", row) from None
    if pixels.min() < 0 or pixels.max() > 255:
        raise DatasetFormatError("pixel outside 0-255", row)
    return pixels.astype(np.uint8).reshape(IMAGE_SIZE, IMAGE_SIZE)


def _reader(stream: TextIO):
    return csv.reader(stream)


def parse_training_csv(stream: TextIO) -> Dataset:
    """Parse the 30-keypoint-columns-plus-Image training format.

    Row numbers in errors count the header as row 1.
    """
    reader = _reader(stream)
    header = next(reader, None)
    if header is None:
        raise DatasetFormatError("missing header")
    header = [h.strip() for h in header]
    if len(header) != N_COORDS + 1 or header[-1] != "Image":
        raise DatasetFormatError(f"expected 30 keypoint columns then Image, got {len(header)} columns", 1)
    names = tuple(header[:-1])
    images, coords = [], []
    for rownum, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != N_COORDS + 1:
            raise DatasetFormatError(f"expected {N_COORDS + 1} columns, got {len(row)}", rownum)
        values = np.full(N_COORDS, np.nan)
        for j, cell in enumerate(row[:-1]):
            cell = cell.strip()
            if cell:
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise DatasetFormatError(f"bad coordinate {cell!r} in {names[j]}", rownum) from None
        coords.append(values)
        images.append(_parse_image(row[-1], rownum))
    if not images:
        return Dataset(np.zeros((0, IMAGE_SIZE, IMAGE_SIZE), np.uint8), np.zeros((0, N_COORDS)), names)
    return Dataset(np.stack(images), np.stack(coords), names)


def parse_test_csv(stream: TextIO) -> Dataset:
    """Parse the ``ImageId,Image`` format; all keypoints come back missing."""
    reader = _reader(stream)
    header = next(reader, None)
    if header is None:
        return Dataset.empty()
    header = [h.strip() for h in header]
    if header != ["ImageId", "Image"]:
        raise DatasetFormatError(f"expected header ImageId,Image, got {','.join(header)}", 1)
    ids, images = [], []
    for rownum, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DatasetFormatError(f"expected 2 columns, got {len(row)}", rownum)
        try:
            ids.append(int(row[0]))
        except ValueError:
            raise DatasetFormatError(f"bad ImageId {row[0]!r}", rownum) from None
        images.append(_parse_image(row[1], rownum))
    if not images:
        return Dataset.empty()
    n = len(images)
    return Dataset(np.stack(images), np.full((n, N_COORDS), np.nan), KEYPOINT_COLUMNS, np.array(ids))


def _format_coord(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def write_training_csv(dataset: Dataset, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(list(dataset.keypoint_names) + ["Image"])
    for img, row in zip(dataset.images, dataset.coords):
        writer.writerow([_format_coord(v) for v in row] + [" ".join(map(str, img.reshape(-1).tolist()))])


def write_test_csv(dataset: Dataset, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["ImageId", "Image"])
    ids = dataset.image_ids if dataset.image_ids is not None else np.arange(1, len(dataset) + 1)
    for i, img in zip(ids, dataset.images):
        writer.writerow([int(i), " ".join(map(str, img.reshape(-1).tolist()))])


def load_training_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_training_csv(fh)


def load_test_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_test_csv(fh)


def save_training_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        write_training_csv(dataset, fh)


def to_csv_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_training_csv(dataset, buf)
    return buf.getvalue()


def find_real_data(data_dir=None) -> tuple[Optional[Path], Optional[Path]]:
    """Locate Kaggle ``training.csv`` / ``test.csv`` under KPBENCH_DATA_DIR."""
    root = data_dir or os.environ.get(DATA_DIR_ENV)
    if not root:
        return None, None
    root = Path(root)
    train, test = root / "training.csv", root / "test.csv"
    return (train if train.is_file() else None), (test if test.is_file() else None)


# ---------------------------------------------------------------------------
# profiling
# ---------------------------------------------------------------------------

def null_profile(dataset: Dataset) -> NullProfile:
    missing = np.isnan(dataset.coords)
    with_missing = int(missing.any(axis=1).sum())
    return NullProfile(
        total=len(dataset),
        complete=len(dataset) - with_missing,
        with_missing=with_missing,
        per_column_missing=tuple(int(c) for c in missing.sum(axis=0)),
    )


def complete_subset(dataset: Dataset) -> Dataset:
    keep = np.flatnonzero(~np.isnan(dataset.coords).any(axis=1))
    return dataset.subset(keep)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

COORD_CENTER = IMAGE_SIZE / 2.0


def normalize_images(images: np.ndarray) -> np.ndarray:
    """uint8 (N, 96, 96) -> float32 (N, 1, 96, 96) in [0, 1]."""
    return (np.asarray(images, dtype=np.float32) / 255.0)[:, None, :, :]


def normalize_coords(coords: np.ndarray) -> np.ndarray:
    return (np.asarray(coords, dtype=np.float64) - COORD_CENTER) / COORD_CENTER


def denormalize(pred: np.ndarray) -> np.ndarray:
    return np.asarray(pred, dtype=np.float64) * COORD_CENTER + COORD_CENTER


def normalize(sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    return normalize_images(sample.image[None])[0], normalize_coords(sample.coords)


# ---------------------------------------------------------------------------
# synthetic faces
# ---------------------------------------------------------------------------

# mean landmark layout of a frontal 96x96 face, (x, y)
TEMPLATE = np.array([
    [66.0, 38.0], [30.0, 38.0],
    [59.0, 38.0], [73.0, 38.0],
    [37.0, 38.0], [23.0, 38.0],
    [57.0, 29.0], [77.0, 30.0],
    [39.0, 29.0], [19.0, 30.0],
    [48.0, 61.0],
    [63.0, 75.0], [33.0, 75.0],
    [48.0, 72.0], [48.0, 79.0],
])

# (sigma_major, sigma_minor, peak) per landmark
_BLOB_STYLE = np.array([
    [2.0, 1.6, 235.0], [2.0, 1.6, 235.0],
    [1.3, 1.0, 185.0], [1.3, 1.0, 165.0],
    [1.3, 1.0, 185.0], [1.3, 1.0, 165.0],
    [1.6, 1.0, 145.0], [1.6, 1.0, 125.0],
    [1.6, 1.0, 145.0], [1.6, 1.0, 125.0],
    [2.2, 1.8, 215.0],
    [1.4, 1.1, 175.0], [1.4, 1.1, 175.0],
    [1.4, 1.0, 200.0], [1.4, 1.0, 155.0],
])

SYNTH_MARGIN = 8.0


def _face_keypoints(rng: np.random.Generator) -> np.ndarray:
    origin = np.array([48.0, 50.0])
    while True:
        scale = rng.uniform(0.7, 1.15)
        angle = np.deg2rad(rng.uniform(-20.0, 20.0))
        center = origin + rng.uniform(-14.0, 14.0, size=2)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        pts = ((TEMPLATE - origin) * scale) @ rot.T + center + rng.normal(0.0, 0.6, size=TEMPLATE.shape)
        if np.all((pts >= SYNTH_MARGIN) & (pts < IMAGE_SIZE - SYNTH_MARGIN)):
            return pts


def _render(pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    face_c = pts.mean(axis=0)
    face = ((xx - face_c[0]) / 36.0) ** 2 + ((yy - face_c[1]) / 44.0) ** 2
    img = np.where(face <= 1.0, 70.0, 25.0) + rng.normal(0.0, 2.0, size=xx.shape)
    for (x, y), (sa, sb, peak) in zip(pts, _BLOB_STYLE):
        theta = rng.uniform(0, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        u = (xx - x) * c + (yy - y) * s
        v = -(xx - x) * s + (yy - y) * c
        blob = peak * np.exp(-0.5 * ((u / sa) ** 2 + (v / sb) ** 2))
        img = np.maximum(img, blob)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthesize_dataset(n: int, seed: int = 0, missing_fraction: float = 0.0) -> Dataset:
    """Render ``n`` synthetic faces whose blobs peak at the stored keypoints.

    ``missing_fraction`` of the rows lose every landmark outside
    ``CORE_LANDMARKS``, mimicking the sparsity pattern of the public data.
    """
    if n <= 0:
        return Dataset.empty()
    if not 0.0 <= missing_fraction <= 1.0:
        raise ValueError("missing_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    images = np.empty((n, IMAGE_SIZE, IMAGE_SIZE), np.uint8)
    coords = np.empty((n, N_COORDS))
    drop = np.ones(N_KEYPOINTS, dtype=bool)
    drop[list(CORE_LANDMARKS)] = False
    drop = np.repeat(drop, 2)
    for i in range(n):
        pts = _face_keypoints(rng)
        images[i] = _render(pts, rng)
        coords[i] = pts.reshape(-1)
        if rng.random() < missing_fraction:
            coords[i, drop] = np.nan
    return Dataset(images, coords)
