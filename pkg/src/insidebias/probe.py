"""Per-layer activation statistics, aggregated per demographic group.

For one image and one probe layer, each feature map is averaged over its
spatial extent and the layer activation is the largest of those averages
(``statistic="mean"`` averages across maps instead). Group profiles are the
arithmetic mean of per-image values.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateModelError, DimensionError, InputError
from .tensor_core import ActivationTrace, Model, Tensor
from .tensor_core.tensor import check_finite

STATISTICS = ("max", "mean")


def mean_map_activation(feature_map) -> float:
    """Spatial mean of one 2-D feature map."""
    a = np.asarray(feature_map.data if isinstance(feature_map, Tensor) else feature_map, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a single 2-D feature map, got shape {a.shape}")
    if a.size == 0:
        raise DimensionError("empty feature map")
    return float(a.sum() / a.size)


def layer_activation(maps, statistic: str = "max") -> float:
    """Layer activation of one ``[m, n1, n2]`` output."""
    a = np.asarray(maps.data if isinstance(maps, Tensor) else maps, dtype=np.float64)
    if a.ndim != 3 or 0 in a.shape:
        raise DimensionError(f"expected [m, n1, n2] with m >= 1, got shape {a.shape}")
    means = a.reshape(a.shape[0], -1).mean(axis=1)
    if statistic == "max":
        return float(means.max())
    if statistic == "mean":
        return float(means.mean())
    raise ConfigurationError(f"statistic must be one of {STATISTICS}, got {statistic!r}")


def batch_layer_activation(value: np.ndarray, statistic: str = "max") -> np.ndarray:
    """Per-image layer activation from a batched probe value.

    ``value`` is ``(N, n1, n2, m)`` for conv probes or ``(N, n)`` for dense
    probes (read as a single 1 x n map).
    """
    if value.ndim == 2:
        means = value.mean(axis=1, dtype=np.float64)[:, None]
    else:
        means = value.mean(axis=(1, 2), dtype=np.float64)
    if statistic == "max":
        return means.max(axis=1)
    if statistic == "mean":
        return means.mean(axis=1)
    raise ConfigurationError(f"statistic must be one of {STATISTICS}, got {statistic!r}")


def trace_activations(trace: ActivationTrace, statistic: str = "max") -> dict[str, np.ndarray]:
    return {name: batch_layer_activation(value, statistic) for name, value in trace}


def image_activations(model: Model, images: np.ndarray, batch_size: int = 256, dense: bool = False,
                      statistic: str = "max") -> tuple[list[str], np.ndarray]:
    """Per-image, per-layer activations: ``(layer names, array (N, L))``.

    """
    if len(images) == 0:
        raise InputError("no images to profile")
    rows = []
    names = None
    for start in range(0, len(images), batch_size):
        _, trace = model.forward(images[start:start + batch_size], capture=True, dense=dense)
        acts = trace_activations(trace, statistic)
        names = list(acts)
        rows.append(np.stack([acts[n] for n in names], axis=1))
    values = np.concatenate(rows)
    check_finite(values, "activations")
    return names, values


@dataclass
class ActivationProfile:
    model_id: str
    group: str
    layers: list[str]
    lam: dict[str, float]
    n_samples: int
    lam_norm: dict[str, float] | None = None
    statistic: str = "max"

    def __post_init__(self):
        if self.n_samples < 1:
            raise InputError("a profile needs at least one sample")

    def curve(self, normalized: bool = False) -> list[float]:
        source = self.lam_norm if normalized else self.lam
        if source is None:
            raise InputError("profile has not been normalized")
        return [source[layer] for layer in self.layers]

    def to_dict(self) -> dict:
        return asdict(self)


def profile_from_values(names: list[str], values: np.ndarray, group, model_id: str = "model",
                        statistic: str = "max") -> ActivationProfile:
    """Group profile from a precomputed ``(N, L)`` activation block."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or len(values) == 0:
        raise InputError(f"group {group!r} has no samples")
    means = values.sum(axis=0) / len(values)
    return ActivationProfile(model_id, str(group), list(names),
                             {n: float(v) for n, v in zip(names, means)}, len(values), statistic=statistic)


def group_profile(model: Model, samples, group="all", model_id: str = "model", batch_size: int = 256,
                  dense: bool = False, statistic: str = "max") -> ActivationProfile:
    """Average per-image layer activations over one group's samples.

    ``samples`` is an ``(N, H, W, C)`` float array or anything with an
    ``inputs()`` method (e.g. a :class:`GroupedDataset`).
    """
    images = samples.inputs() if hasattr(samples, "inputs") else np.asarray(samples)
    if len(images) == 0:
        raise InputError(f"group {group!r} is empty")
    if not model.probe_points:
        raise InputError("model has no probe points")
    names, values = image_activations(model, images, batch_size, dense, statistic)
    return profile_from_values(names, values, group, model_id, statistic)


def normalize_profiles(profiles: list[ActivationProfile], scope: str = "model") -> list[ActivationProfile]:
    """Attach normalized curves to every profile of one model.

    ``scope="model"`` divides by one shared normalizer, the largest layer
    activation of any group, so curves of different groups stay comparable.
    ``scope="group"`` divides each curve by its own maximum.
    """
    if not profiles:
        raise InputError("need at least one profile")
    if len({p.model_id for p in profiles}) != 1:
        raise InputError("profiles come from more than one model")
    if scope not in ("model", "group"):
        raise ConfigurationError(f"scope must be 'model' or 'group', got {scope!r}")
    shared = max(max(p.lam.values()) for p in profiles)
    out = []
    for p in profiles:
        norm = shared if scope == "model" else max(p.lam.values())
        if norm <= 0:
            raise DegenerateModelError(f"all activations are zero for model {p.model_id!r}")
        lam_norm = {layer: p.lam[layer] / norm for layer in p.layers}
        out.append(ActivationProfile(p.model_id, p.group, list(p.layers), dict(p.lam), p.n_samples,
                                     lam_norm, p.statistic))
    return out


CSV_HEADER = ("layer", "group", "lambda", "lambda_norm", "n")


def profiles_to_csv(profiles: list[ActivationProfile]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for p in profiles:
        for layer in p.layers:
            norm = "" if p.lam_norm is None else repr(p.lam_norm[layer])
            writer.writerow([layer, p.group, repr(p.lam[layer]), norm, p.n_samples])
    return buf.getvalue()


def profiles_to_json(profiles: list[ActivationProfile]) -> str:
    return json.dumps([p.to_dict() for p in profiles], sort_keys=True, indent=2)
