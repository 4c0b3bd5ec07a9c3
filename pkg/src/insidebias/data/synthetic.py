"""Synthetic grouped binary-classification images.

A stand-in for private face data: the task is the orientation of a bar
(near-horizontal vs. near-vertical), and each group renders its images with
its own colour palette and background stripe angle. Backgrounds are dark
and noisy, and each group's bar is bright in a different colour channel, so
edge detectors learned on one group transfer only partly to the others. Every
subject contributes a few images; train and test never share a subject.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import GroupedDataset

GROUPS = ("A", "B", "C")

# per group: bar RGB, background RGB, stripe angle (radians). Backgrounds
# are dark, and each bar is bright in one channel only
PALETTES = {
    "A": ((0.80, 0.15, 0.15), (0.15, 0.15, 0.15), 0.0),
    "B": ((0.15, 0.80, 0.15), (0.15, 0.15, 0.15), np.pi / 3),
    "C": ((0.15, 0.15, 0.80), (0.15, 0.15, 0.15), 2 * np.pi / 3),
}


@dataclass(frozen=True)
class SyntheticConfig:
    size: int = 32
    images_per_subject: int = 3
    noise: float = 0.25
    jitter: float = 0.2             # std of the bar angle around 0 or pi/2, radians
    contrast: tuple[float, float] = (1.0, 1.0)   # per-image bar contrast, as a fraction of the palette's
    half_length: tuple[float, float] = (4.0, 8.0)
    half_width: tuple[float, float] = (1.0, 2.0)
    groups: tuple[str, ...] = GROUPS
    palettes: dict = field(default_factory=lambda: dict(PALETTES), compare=False, hash=False)


def _render(rng: np.random.Generator, cfg: SyntheticConfig, group: str, task: int, subject: dict) -> np.ndarray:
    n = cfg.size
    fg, bg, angle = cfg.palettes[group]
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    # background stripes
    phase = rng.uniform(0, 2 * np.pi)
    u = np.cos(angle) * xx + np.sin(angle) * yy
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * u / subject["period"] + phase)
    img = np.asarray(bg)[None, None, :] * (0.55 + 0.45 * stripes[..., None])
    # foreground bar; task 0 lies near horizontal, task 1 near vertical
    theta = (0.0 if task == 0 else np.pi / 2) + rng.normal(0, cfg.jitter)
    half_l = subject["length"] * rng.uniform(0.9, 1.1)
    margin = min(half_l + 1, n / 2 - 1)
    cy, cx = rng.uniform(margin, n - margin, size=2)
    dx, dy = xx - cx, yy - cy
    a = np.cos(theta) * dx + np.sin(theta) * dy
    b = -np.sin(theta) * dx + np.cos(theta) * dy
    inside = (np.abs(a) <= half_l) & (np.abs(b) <= subject["width"])
    contrast = rng.uniform(*cfg.contrast)
    color = np.clip(np.asarray(bg) + contrast * (np.asarray(fg) - np.asarray(bg)) + subject["tint"], 0, 1)
    img[inside] = color
    img += rng.normal(0, cfg.noise, size=img.shape)
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def subject_id(sample_id: str) -> str:
    return str(sample_id).rsplit("-", 1)[0]


def generate_grouped(n_subjects_per_cell: int, split: str = "train", seed: int = 0,
                     cfg: SyntheticConfig | None = None, id_offset: int = 0) -> GroupedDataset:
    """Balanced set: ``n_subjects_per_cell`` subjects per (group, task) cell.

    Subject ids are ``"s<number>"`` counting from ``id_offset``; the sample
    id appends the image index. Give the test split an offset past the train
    subjects so :func:`subject_id` keeps the splits apart.
    """
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng([seed, sum(map(ord, split))])
    images, tasks, groups, ids = [], [], [], []
    subject = id_offset
    for group in cfg.groups:
        for task in (0, 1):
            for _ in range(n_subjects_per_cell):
                traits = {
                    "length": rng.uniform(*cfg.half_length),
                    "width": rng.uniform(*cfg.half_width),
                    "period": rng.uniform(4.0, 8.0),
                    "tint": rng.normal(0, 0.05, size=3),
                }
                for k in range(cfg.images_per_subject):
                    images.append(_render(rng, cfg, group, task, traits))
                    tasks.append(task)
                    groups.append(group)
                    ids.append(f"s{subject:06d}-{k}")
                subject += 1
    return GroupedDataset(
        images=np.stack(images),
        task=np.array(tasks),
        ids=np.array(ids),
        criteria={"group": np.array(groups)},
        levels={"group": list(cfg.groups)},
        split=split,
        provenance={"source": "synthetic", "seed": seed, "subjects_per_cell": n_subjects_per_cell},
    )
