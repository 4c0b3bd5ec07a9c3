"""CSV manifests for grouped image sets.

Header ``id,path,task,group``; UTF-8; ``path`` is relative to the manifest.
Images are PNG/JPEG (read as RGB) or ``.npy`` uint8 arrays of shape
``(H, W, 3)``. All images of one manifest must share a shape.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigurationError, DimensionError, InputError
from .dataset import GroupedDataset

MANIFEST_COLUMNS = ("id", "path", "task", "group")


def _load_image(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.dtype != np.uint8:
            raise ConfigurationError(f"{path}: .npy images must be uint8")
        return arr
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_manifest(path, criterion: str = "group", split: str = "test", levels: list | None = None) -> GroupedDataset:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest {path} does not exist")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise ConfigurationError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise InputError(f"manifest {path} lists no samples")
    images = []
    for row in rows:
        img = _load_image(path.parent / row["path"])
        if images and img.shape != images[0].shape:
            raise DimensionError(f"{row['path']}: shape {img.shape} differs from {images[0].shape}")
        images.append(img)
    ids = np.array([r["id"] for r in rows])
    if len(set(ids.tolist())) != len(ids):
        raise InputError(f"manifest {path} repeats sample ids")
    groups = np.array([r["group"] for r in rows])
    return GroupedDataset(
        images=np.stack(images),
        task=np.array([int(r["task"]) for r in rows]),
        ids=ids,
        criteria={criterion: groups},
        levels={criterion: levels or sorted(set(groups.tolist()))},
        split=split,
        provenance={"source": str(path.name)},
    )


def write_manifest(ds: GroupedDataset, directory, criterion: str = "group", name: str = "manifest.csv",
                   image_dir: str = "images") -> Path:
    """Write ``ds`` as PNG files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / image_dir).mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    groups = ds.labels(criterion)
    for i in range(len(ds)):
        rel = f"{image_dir}/{ds.ids[i]}.png"
        Image.fromarray(ds.images[i]).save(directory / rel, optimize=False)
        writer.writerow([ds.ids[i], rel, int(ds.task[i]), groups[i]])
    out = directory / name
    out.write_text(buf.getvalue(), encoding="utf-8")
    return out
