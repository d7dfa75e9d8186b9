"""Datasets: IDX (MNIST / Fashion-MNIST) files, synthetic blobs, downscaling.

IDX layout, all integers big-endian::

    u8  0, u8 0, u8 dtype (0x08 = unsigned byte), u8 ndim
    u32 size of each dimension
    payload, row-major

so image files start with ``0x00000803`` and label files with ``0x00000801``.
Paths ending in ``.gz`` are read and written through gzip.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import (
    DomainError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTrailingDataError,
    IdxTruncatedError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
_UBYTE = 0x08

DATA_DIR_ENV = "QGATTACK_DATA_DIR"

PathLike = Union[str, os.PathLike]


@dataclass
class Dataset:
    images: np.ndarray  # (n, d) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    name: str = ""
    image_shape: Tuple[int, int] = (0, 0)
    num_classes: int = 10

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.labels.shape != (self.images.shape[0],):
            raise DomainError(
                f"images {self.images.shape} and labels {self.labels.shape} do not line up"
            )
        if self.image_shape == (0, 0):
            self.image_shape = (1, self.images.shape[1])
        if self.image_shape[0] * self.image_shape[1] != self.images.shape[1]:
            raise DomainError(f"image shape {self.image_shape} does not match width {self.images.shape[1]}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DomainError("pixels must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.name, self.image_shape, self.num_classes)


def resolve_data_path(path: PathLike) -> Path:
    """Relative paths are looked up under ``$QGATTACK_DATA_DIR`` when it is set."""
    p = Path(path)
    root = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and root:
        return Path(root) / p
    return p


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def parse_idx(blob: bytes, expected_ndim: Optional[int] = None) -> np.ndarray:
    """Decode an unsigned-byte IDX blob into a uint8 array."""
    if len(blob) < 4:
        raise IdxTruncatedError(f"header needs 4 bytes, file has {len(blob)}")
    zero0, zero1, dtype, ndim = blob[:4]
    magic = struct.unpack(">I", blob[:4])[0]
    if zero0 or zero1 or dtype != _UBYTE:
        raise IdxMagicError(f"unsupported IDX magic 0x{magic:08x}")
    if expected_ndim is not None and ndim != expected_ndim:
        raise IdxMagicError(
            f"magic 0x{magic:08x} describes {ndim}-D data, expected {expected_ndim}-D"
        )
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise IdxTruncatedError("dimension header is truncated")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(blob) < header + size:
        raise IdxTruncatedError(f"payload needs {size} bytes, file has {len(blob) - header}")
    if len(blob) > header + size:
        raise IdxTrailingDataError(f"{len(blob) - header - size} bytes after the payload")
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=header).reshape(dims)


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise DomainError("only unsigned-byte IDX payloads are supported")
    head = bytes([0, 0, _UBYTE, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array).tobytes()


def read_idx(path: PathLike, expected_ndim: Optional[int] = None) -> np.ndarray:
    with _open(Path(path), "rb") as f:
        return parse_idx(f.read(), expected_ndim)


def write_idx(path: PathLike, array: np.ndarray) -> None:
    with _open(Path(path), "wb") as f:
        f.write(encode_idx(array))


def load_idx(images_path: PathLike, labels_path: PathLike, name: str = "", num_classes: int = 10) -> Dataset:
    """Load an image/label IDX pair; pixels are divided by 255."""
    images = read_idx(images_path, expected_ndim=3)
    labels = read_idx(labels_path, expected_ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    n, rows, cols = images.shape
    if labels.size:
        num_classes = max(num_classes, int(labels.max()) + 1)
    return Dataset(
        images.reshape(n, rows * cols).astype(np.float64) / 255.0,
        labels.astype(np.int64),
        name or Path(images_path).name,
        (rows, cols),
        num_classes,
    )


def save_idx(dataset: Dataset, images_path: PathLike, labels_path: PathLike) -> None:
    """Write ``dataset`` back as IDX; pixels are scaled by 255 and rounded."""
    if dataset.labels.size and dataset.labels.max() > 255:
        raise DomainError("labels do not fit in a byte")
    rows, cols = dataset.image_shape
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8).reshape(len(dataset), rows, cols)
    write_idx(images_path, pixels)
    write_idx(labels_path, dataset.labels.astype(np.uint8))


def synth_dataset(
    n: int, side: int = 8, num_classes: int = 10, seed: int = 0,
    blob_width: float = 1.0, noise: float = 0.05, jitter: float = 0.3,
) -> Dataset:
    """Class-conditional Gaussian-blob images.

    Class ``k`` has a bright blob centred at a class-specific spot on a circle
    around the image centre. Each sample jitters the centre, adds pixel noise
    and is clipped to ``[0, 1]``.
    """
    if n < 1 or side < 2 or num_classes < 2:
        raise DomainError("need n >= 1, side >= 2, num_classes >= 2")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    radius = 0.3 * (side - 1)
    mid = (side - 1) / 2.0
    centres = np.stack([mid + radius * np.cos(angles), mid + radius * np.sin(angles)], axis=1)
    centre = centres[labels] + rng.normal(0.0, jitter, size=(n, 2))
    rr, cc = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    grid = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    sq = ((grid[None, :, :] - centre[:, None, :]) ** 2).sum(axis=2)
    images = np.exp(-sq / (2.0 * blob_width**2)) + rng.normal(0.0, noise, size=sq.shape)
    return Dataset(
        np.clip(images, 0.0, 1.0), labels, f"synth-{side}x{side}-seed{seed}",
        (side, side), num_classes,
    )


def downscale(dataset: Dataset, factor: int) -> Dataset:
    """Average-pool ``factor x factor`` blocks; both image sides must divide evenly."""
    if factor < 1:
        raise DomainError("factor must be >= 1")
    if factor == 1:
        return dataset
    rows, cols = dataset.image_shape
    if rows % factor or cols % factor:
        raise DomainError(f"image shape {dataset.image_shape} is not divisible by {factor}")
    r2, c2 = rows // factor, cols // factor
    blocks = dataset.images.reshape(len(dataset), r2, factor, c2, factor)
    pooled = blocks.mean(axis=(2, 4))
    # mean of values in [0, 1] can overshoot 1 by an ulp
    pooled = np.clip(pooled, 0.0, 1.0).reshape(len(dataset), r2 * c2)
    return Dataset(pooled, dataset.labels, f"{dataset.name}/{factor}", (r2, c2), dataset.num_classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int = 0):
    if not 0.0 < test_fraction < 1.0:
        raise DomainError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])
