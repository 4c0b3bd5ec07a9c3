"""Colour-biased MNIST.

Each grayscale digit is copied into exactly one RGB channel (black
background). For a biased config the primary digit gets the primary colour
on ``primary_fraction`` of its samples, the rest split evenly over the two
other colours, and every other digit is split evenly over those two other
colours only. The uniform config (``primary_fraction == 1/3``) splits every
digit evenly over all three colours. Counts are exact, not Bernoulli draws.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError
from .dataset import GroupedDataset

COLORS = ("red", "green", "blue")
UNIFORM = 1.0 / 3.0


@dataclass(frozen=True)
class ColorBiasConfig:
    primary_digit: int = 0
    primary_color: str = "red"
    primary_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.primary_digit <= 9:
            raise ConfigurationError(f"primary_digit must be 0-9, got {self.primary_digit}")
        if self.primary_color not in COLORS:
            raise ConfigurationError(f"primary_color must be one of {COLORS}, got {self.primary_color!r}")
        if not 0 <= self.primary_fraction <= 1:
            raise ConfigurationError(f"primary_fraction must lie in [0, 1], got {self.primary_fraction}")

    @classmethod
    def uniform(cls, seed: int = 0) -> ColorBiasConfig:
        return cls(primary_fraction=UNIFORM, seed=seed)

    @property
    def is_uniform(self) -> bool:
        return math.isclose(self.primary_fraction, UNIFORM, rel_tol=0, abs_tol=1e-9)

    @property
    def secondary_colors(self) -> tuple[str, str]:
        return tuple(c for c in COLORS if c != self.primary_color)

    @property
    def name(self) -> str:
        if self.is_uniform:
            return "unbiased"
        return f"digit{self.primary_digit}-{self.primary_color}-{self.primary_fraction:g}"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _split_counts(n: int, k: int, rng: np.random.Generator) -> list[int]:
    """``n`` into ``k`` near-equal counts; which parts get the +1 is seeded."""
    counts = np.full(k, n // k)
    counts[rng.permutation(k)[: n % k]] += 1
    return counts.tolist()


def assign_colors(task: np.ndarray, cfg: ColorBiasConfig) -> np.ndarray:
    """Colour name per sample under ``cfg`` (exact-count, seeded)."""
    rng = np.random.default_rng([cfg.seed, 0xC0105])
    colors = np.empty(len(task), dtype="<U5")
    secondary = cfg.secondary_colors
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(task == digit))
        n = len(idx)
        if cfg.is_uniform:
            palette, counts = COLORS, _split_counts(n, 3, rng)
        elif digit == cfg.primary_digit:
            n_primary = int(round(cfg.primary_fraction * n))
            palette = (cfg.primary_color, *secondary)
            counts = [n_primary, *_split_counts(n - n_primary, 2, rng)]
        else:
            palette, counts = secondary, _split_counts(n, 2, rng)
        start = 0
        for color, count in zip(palette, counts):
            colors[idx[start:start + count]] = color
            start += count
    return colors


def colorize(ds: GroupedDataset, cfg: ColorBiasConfig) -> GroupedDataset:
    """Return an RGB copy of grayscale ``ds`` with a ``"color"`` criterion."""
    if ds.images.shape[-1] != 1 or "color" in ds.criteria:
        raise ConfigurationError("colorize expects a grayscale dataset that has not been coloured yet")
    colors = assign_colors(ds.task, cfg)
    gray = ds.images[..., 0]
    rgb = np.zeros(gray.shape + (3,), dtype=np.uint8)
    for channel, color in enumerate(COLORS):
        sel = colors == color
        rgb[sel, ..., channel] = gray[sel]
    criteria = dict(ds.criteria)
    criteria["color"] = colors
    levels = {k: list(v) for k, v in ds.levels.items()}
    levels["color"] = list(COLORS)
    provenance = dict(ds.provenance)
    provenance.update({"color_config": asdict(cfg), "color_digest": cfg.digest()})
    return GroupedDataset(rgb, ds.task.copy(), ds.ids.copy(), criteria, levels, ds.split, provenance)
