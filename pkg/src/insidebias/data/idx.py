"""IDX (MNIST) file parsing.

Layout, all integers big-endian::

    u32  magic      0x00000803 images / 0x00000801 labels
    u32  count
    u32  rows, u32 cols      (images only)
    u8[] payload, row-major
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from ..errors import IdxLengthMismatchError, IdxTruncatedError, MagicNumberError
from .dataset import GroupedDataset

IMAGE_MAGIC = 0x00000803  # 2051
LABEL_MAGIC = 0x00000801  # 2049


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(raw: bytes, expected_magic: int, name: str = "idx") -> np.ndarray:
    if len(raw) < 8:
        raise IdxTruncatedError(f"{name}: {len(raw)} bytes is too short for an IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise MagicNumberError(f"{name}: magic number {magic} (expected {expected_magic})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{name}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    payload = len(raw) - header
    if payload < expected:
        raise IdxTruncatedError(f"{name}: payload has {payload} bytes, header declares {expected}")
    if payload > expected:
        raise IdxLengthMismatchError(f"{name}: {payload - expected} trailing bytes after declared payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    return parse_idx(_read_bytes(path), IMAGE_MAGIC, str(path))


def load_idx_labels(path) -> np.ndarray:
    return parse_idx(_read_bytes(path), LABEL_MAGIC, str(path))


def load_idx(images_path, labels_path, split: str | None = None) -> GroupedDataset:
    """Grayscale MNIST-style dataset; ids are ``"<split>-<row>"``."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxLengthMismatchError(f"{len(images)} images but {len(labels)} labels")
    if split is None:
        split = "test" if Path(images_path).name.startswith("t10k") else "train"
    ids = np.array([f"{split}-{i}" for i in range(len(labels))])
    return GroupedDataset(
        images=images.copy(),
        task=labels.astype(np.int64),
        ids=ids,
        split=split,
        provenance={"source": str(Path(images_path).name), "labels": str(Path(labels_path).name)},
    )


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (used by tests and the fetcher)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        f.write(array.tobytes())
