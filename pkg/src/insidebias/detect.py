"""Activation-ratio bias detector.

The activation ratio at a layer is the smallest group activation divided by
the largest one. A model is flagged when the ratio falls below ``tau``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CapacityError, ConfigurationError, DegenerateModelError, InputError
from .probe import ActivationProfile, image_activations, normalize_profiles, profile_from_values
from .tensor_core import Model

REPORT_SCHEMA = "insidebias.bias_report/1"
DEFAULT_TAU = 0.90


def activation_ratio(lam_by_group: dict) -> float:
    """min over groups / max over groups of one layer's activation."""
    if len(lam_by_group) < 2:
        raise InputError("the activation ratio needs at least two groups")
    values = np.array([float(v) for v in lam_by_group.values()])
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise InputError(f"layer activations must be finite and non-negative, got {values.tolist()}")
    top = values.max()
    if top == 0:
        raise DegenerateModelError("every group has zero activation at this layer")
    return float(values.min() / top)


@dataclass
class BiasVerdict:
    criterion: str
    layer: str
    ratio: float
    tau: float
    biased: bool
    margin: float
    min_group: str
    max_group: str
    per_layer: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_layers(layers: list[str], selector: str = "last") -> list[str]:
    """Probe layers named by ``selector``: ``last``, ``final-k`` or a layer name."""
    if not layers:
        raise ConfigurationError("profiles carry no layers")
    if selector == "last":
        return [layers[-1]]
    m = re.fullmatch(r"final-(\d+)", selector)
    if m:
        k = int(m.group(1))
        if not 1 <= k <= len(layers):
            raise ConfigurationError(f"{selector!r}: only {len(layers)} probe layers available")
        return layers[-k:]
    if selector in layers:
        return [selector]
    raise ConfigurationError(f"layer selector {selector!r} matches no probe layer")


def verdict(profiles: list[ActivationProfile], layer: str = "last", tau: float = DEFAULT_TAU,
            criterion: str = "group", normalized: bool = False) -> BiasVerdict:
    """Threshold the activation ratio at the selected layer(s).

    With ``final-k`` the ratio is the mean of the per-layer ratios over the
    last k probes; min/max groups are reported for the deepest of them.
    """
    if not 0 <= tau <= 1:
        raise ConfigurationError(f"tau must lie in [0, 1], got {tau}")
    if len(profiles) < 2:
        raise InputError("a verdict needs profiles for at least two groups")
    chosen = resolve_layers(profiles[0].layers, layer)
    per_layer = {}
    for name in chosen:
        source = [(p.group, (p.lam_norm if normalized else p.lam)[name]) for p in profiles]
        per_layer[name] = activation_ratio(dict(source))
    ratio = float(np.mean(list(per_layer.values())))
    deepest = {p.group: p.lam[chosen[-1]] for p in profiles}
    # first occurrence wins on ties so the result does not depend on dict internals
    groups = list(deepest)
    values = [deepest[g] for g in groups]
    return BiasVerdict(
        criterion=criterion,
        layer=chosen[0] if len(chosen) == 1 else layer,
        ratio=ratio,
        tau=tau,
        biased=ratio < tau,
        margin=ratio - tau,
        min_group=groups[int(np.argmin(values))],
        max_group=groups[int(np.argmax(values))],
        per_layer=per_layer,
    )


@dataclass
class GroupSummary:
    group: str
    n: int
    accuracy: float
    confidence: float
    lam: dict[str, float]
    lam_norm: dict[str, float]


@dataclass
class BiasReport:
    model: dict
    criterion: str
    verdict: BiasVerdict
    groups: list[GroupSummary]
    layers: list[str]
    inputs_digest: str
    bootstrap: dict | None = None
    config: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "model": self.model,
            "criterion": self.criterion,
            "verdict": self.verdict.to_dict(),
            "layers": list(self.layers),
            "groups": [asdict(g) for g in self.groups],
            "inputs_digest": self.inputs_digest,
            "bootstrap": self.bootstrap,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> BiasReport:
        if d.get("schema") != REPORT_SCHEMA:
            raise ConfigurationError(f"unsupported report schema {d.get('schema')!r}")
        return cls(
            model=d["model"], criterion=d["criterion"], verdict=BiasVerdict(**d["verdict"]),
            groups=[GroupSummary(**g) for g in d["groups"]], layers=d["layers"],
            inputs_digest=d["inputs_digest"], bootstrap=d.get("bootstrap"), config=d.get("config", {}),
        )

    def profiles(self) -> list[ActivationProfile]:
        return [ActivationProfile(self.model.get("id", "model"), g.group, list(self.layers), g.lam, g.n,
                                  g.lam_norm) for g in self.groups]


def _inputs_digest(images: np.ndarray, task: np.ndarray, groups: np.ndarray) -> str:
    h = hashlib.sha256()
    for arr in (images, task, np.asarray(groups).astype(str)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def bootstrap_ratio(values_by_group: dict, layer_index: int, n_resamples: int = 200,
                    seed: int = 0) -> dict:
    """Spread of the ratio when each group's images are resampled with replacement."""
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(n_resamples):
        lam = {}
        for g, vals in values_by_group.items():
            pick = rng.integers(0, len(vals), len(vals))
            lam[g] = vals[pick, layer_index].mean()
        try:
            ratios.append(activation_ratio(lam))
        except DegenerateModelError:
            continue
    ratios = np.array(ratios)
    if len(ratios) == 0:
        return {"n_resamples": 0}
    return {
        "n_resamples": int(len(ratios)),
        "seed": seed,
        "mean": float(ratios.mean()),
        "std": float(ratios.std()),
        "p05": float(np.quantile(ratios, 0.05)),
        "p95": float(np.quantile(ratios, 0.95)),
    }


def audit(model: Model, dataset, criterion: str = "group", tau: float = DEFAULT_TAU, layer: str = "last",
          model_id: str = "model", weights_digest: str | None = None, batch_size: int = 256,
          n_bootstrap: int = 200, seed: int = 0, statistic: str = "max", normalize_scope: str = "model",
          config: dict | None = None, activations: tuple | None = None,
          probs: np.ndarray | None = None) -> BiasReport:
    """Profile every group of ``dataset`` under ``criterion`` and build a report.

    ``dataset`` is a :class:`~insidebias.data.GroupedDataset` whose task
    labels are used for per-group accuracy and confidence. Precomputed
    ``activations`` (names, per-image values) and ``probs`` skip the forward
    passes.
    """
    parts = dataset.group_indices(criterion)
    if len(parts) < 2:
        raise InputError(f"criterion {criterion!r} has {len(parts)} non-empty group(s); need >= 2")
    if activations is None or probs is None:
        images = dataset.inputs()
        if activations is None:
            activations = image_activations(model, images, batch_size, statistic=statistic)
        if probs is None:
            probs = model.predict_proba(images, batch_size)
    names, values = activations
    task = dataset.task
    profiles, summaries, by_group = [], [], {}
    for g, idx in parts.items():
        profiles.append(profile_from_values(names, values[idx], g, model_id, statistic))
        by_group[str(g)] = values[idx]
    profiles = normalize_profiles(profiles, normalize_scope)
    for p, (g, idx) in zip(profiles, parts.items()):
        correct = probs[idx].argmax(axis=1) == task[idx]
        summaries.append(GroupSummary(
            group=str(g), n=len(idx), accuracy=float(correct.mean()),
            confidence=float(probs[idx, task[idx]].mean()), lam=p.lam, lam_norm=p.lam_norm,
        ))
    v = verdict(profiles, layer, tau, criterion)
    boot = None
    if n_bootstrap:
        boot = bootstrap_ratio(by_group, names.index(resolve_layers(names, layer)[-1]), n_bootstrap, seed)
    return BiasReport(
        model={"id": model_id, "arch_id": model.arch_id, "param_count": model.param_count,
               "weights_sha256": weights_digest},
        criterion=criterion,
        verdict=v,
        groups=summaries,
        layers=names,
        inputs_digest=_inputs_digest(dataset.images, task, dataset.labels(criterion)),
        bootstrap=boot,
        config=dict(config or {"tau": tau, "layer": layer, "statistic": statistic,
                               "normalize_scope": normalize_scope}),
    )


def few_shot_ratios(names: list[str], values: np.ndarray, labels: np.ndarray, groups: list,
                    per_group: int = 5, draws: int = 10, seed: int = 0, layer: str = "last") -> list[float]:
    """Activation ratios from ``draws`` disjoint draws of ``per_group`` images per group.

    ``values`` holds per-image layer activations (rows aligned with
    ``labels``). The draws depend only on ``labels`` and ``seed``, so models
    audited on the same test set see the same images.
    """
    rng = np.random.default_rng([seed, 0xF5])
    col = names.index(resolve_layers(list(names), layer)[-1])
    picks = {}
    for g in groups:
        idx = np.flatnonzero(labels == g)
        if len(idx) < per_group * draws:
            raise CapacityError(str(g), per_group * draws, len(idx))
        picks[g] = rng.permutation(idx)[: per_group * draws].reshape(draws, per_group)
    return [activation_ratio({g: values[picks[g][d], col].mean() for g in groups}) for d in range(draws)]


def report_tables(report: BiasReport) -> dict[str, str]:
    """CSV renderings: per-group summary (accuracy, S, lambda, ratio) and curves."""
    last = report.verdict.per_layer and list(report.verdict.per_layer)[-1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "n", "accuracy", "confidence", "lambda", "activation_ratio"])
    for g in report.groups:
        w.writerow([g.group, g.n, repr(g.accuracy), repr(g.confidence), repr(g.lam[last]),
                    repr(report.verdict.ratio)])
    summary = buf.getvalue()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "group", "lambda", "lambda_norm", "n"])
    for layer in report.layers:
        for g in report.groups:
            w.writerow([layer, g.group, repr(g.lam[layer]), repr(g.lam_norm[layer]), g.n])
    return {"summary": summary, "curves": buf.getvalue()}
