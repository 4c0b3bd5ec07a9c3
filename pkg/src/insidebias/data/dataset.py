from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, GroupLookupError, InputError


@dataclass
class GroupedDataset:
    """Images with a task label and one label per demographic criterion.

    ``images`` is ``(N, H, W, C)`` uint8; :meth:`inputs` hands out float32 in
    ``[0, 1]``. ``criteria`` maps a criterion name to a length-N array of
    group labels, and ``levels`` fixes the display order of those labels.
    """

    images: np.ndarray
    task: np.ndarray
    ids: np.ndarray
    criteria: dict[str, np.ndarray] = field(default_factory=dict)
    levels: dict[str, list] = field(default_factory=dict)
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if self.images.ndim != 4:
            raise DimensionError(f"images must be (N, H, W, C), got {self.images.shape}")
        n = len(self.images)
        self.task = np.asarray(self.task, dtype=np.int64)
        self.ids = np.asarray(self.ids)
        if len(self.task) != n or len(self.ids) != n:
            raise DimensionError(f"{n} images but {len(self.task)} task labels / {len(self.ids)} ids")
        for name, labels in self.criteria.items():
            labels = np.asarray(labels)
            if len(labels) != n:
                raise InputError(f"criterion {name!r} labels {len(labels)} of {n} samples")
            self.criteria[name] = labels
            if name not in self.levels:
                self.levels[name] = sorted(set(labels.tolist()))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def inputs(self, index=slice(None)) -> np.ndarray:
        return self.images[index].astype(np.float32) / np.float32(255.0)

    def subset(self, index) -> GroupedDataset:
        index = np.asarray(index)
        return GroupedDataset(
            images=self.images[index],
            task=self.task[index],
            ids=self.ids[index],
            criteria={k: v[index] for k, v in self.criteria.items()},
            levels={k: list(v) for k, v in self.levels.items()},
            split=self.split,
            provenance=dict(self.provenance),
        )

    def labels(self, criterion: str) -> np.ndarray:
        if criterion not in self.criteria:
            raise GroupLookupError(f"unknown criterion {criterion!r}; declared: {sorted(self.criteria)}")
        return self.criteria[criterion]

    def group_indices(self, criterion: str) -> dict:
        """Group label -> sample indices, in level order, empty groups omitted."""
        labels = self.labels(criterion)
        parts = {}
        for level in self.levels[criterion]:
            idx = np.flatnonzero(labels == level)
            if len(idx):
                parts[level] = idx
        return parts

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.images.shape, self.split], sort_keys=True).encode())
        for arr in (self.images, self.task, self.ids.astype(str)):
            h.update(np.ascontiguousarray(arr).tobytes())
        for name in sorted(self.criteria):
            h.update(name.encode())
            h.update(self.criteria[name].astype(str).tobytes())
        return h.hexdigest()


def partition(ds: GroupedDataset, criterion: str) -> dict:
    """Split ``ds`` by ``criterion`` into an exhaustive, disjoint map k -> subset.

    Sample order inside each part follows the original order.
    """
    return {k: ds.subset(idx) for k, idx in ds.group_indices(criterion).items()}


def concat(parts: list[GroupedDataset]) -> GroupedDataset:
    if not parts:
        raise InputError("nothing to concatenate")
    first = parts[0]
    return GroupedDataset(
        images=np.concatenate([p.images for p in parts]),
        task=np.concatenate([p.task for p in parts]),
        ids=np.concatenate([p.ids for p in parts]),
        criteria={k: np.concatenate([p.criteria[k] for p in parts]) for k in first.criteria},
        levels={k: list(v) for k, v in first.levels.items()},
        split=first.split,
        provenance=dict(first.provenance),
    )


def assert_disjoint(train: GroupedDataset, test: GroupedDataset, key=None) -> None:
    """Raise if any identifier appears in both splits.

    ``key`` maps a sample id to the identity that must not be shared (for
    example the subject); by default the sample id itself.
    """
    a, b = train.ids.astype(str), test.ids.astype(str)
    if key is not None:
        a, b = np.array([key(i) for i in a]), np.array([key(i) for i in b])
    shared = np.intersect1d(a, b)
    if len(shared):
        raise InputError(f"{len(shared)} identities leak between train and test, e.g. {shared[:3].tolist()}")
