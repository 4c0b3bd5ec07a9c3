"""End-to-end studies: colored MNIST (31 models) and grouped binary protocols.

Output layout::

    <output_dir>/<study>/manifest.json
    <output_dir>/<study>/<run-id>/{weights.bin, eval.json, bias_report.json, curves.csv, manifest.json}

Every file is written atomically and carries no timestamps or absolute
paths, so re-running a study with the same seed reproduces it byte for byte.
Runs whose manifest matches the requested spec are reused, not retrained.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..data import (
    COLORS, ColorBiasConfig, GroupedDataset, SyntheticConfig, assert_disjoint,
    build_group_protocol, colorize, generate_grouped, read_manifest, subject_id,
)
from ..detect import BiasReport, audit, few_shot_ratios, report_tables
from ..errors import ConfigurationError, NumericError
from ..probe import image_activations
from ..zoo import build_model, file_digest, load_weights, save_weights
from ..zoo.weights import atomic_write
from .config import ProtocolConfig
from .evaluate import EvaluationResult, evaluate, train_model
from .mnist import load_mnist

log = logging.getLogger(__name__)

SMALL_FRACTION = 0.10
ARTIFACTS = ("weights.bin", "eval.json", "bias_report.json", "curves.csv", "manifest.json")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_text(path: Path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunSpec:
    run_id: str
    arch: str
    bias: dict

    @property
    def unbiased(self) -> bool:
        return bool(self.bias.get("unbiased"))


@dataclass
class RunResult:
    spec: RunSpec
    status: str
    run_dir: Path
    evaluation: EvaluationResult | None = None
    report: BiasReport | None = None
    few_shot: list[float] = field(default_factory=list)
    weights_sha256: str | None = None
    error: str | None = None
    reused: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def model(self):
        return load_weights(self.run_dir / "weights.bin")

    @property
    def ratio(self) -> float:
        return self.report.verdict.ratio


@dataclass
class StudyResult:
    name: str
    directory: Path
    runs: list[RunResult]

    def __getitem__(self, run_id: str) -> RunResult:
        for r in self.runs:
            if r.spec.run_id == run_id:
                return r
        raise KeyError(run_id)

    def biased(self) -> list[RunResult]:
        return [r for r in self.runs if not r.spec.unbiased]

    def unbiased(self) -> list[RunResult]:
        return [r for r in self.runs if r.spec.unbiased]


def parse_digit_bias(entry: str) -> tuple[int, str]:
    digit, _, color = str(entry).partition(":")
    if not digit.isdigit() or color not in COLORS:
        raise ConfigurationError(f"bias entry {entry!r} must look like '<digit>:<{'|'.join(COLORS)}>'")
    return int(digit), color


def digit_runs(cfg: ProtocolConfig) -> list[RunSpec]:
    entries = cfg.digit.biased
    if entries == "all" or entries == ["all"]:
        entries = [f"{d}:{c}" for d in range(10) for c in COLORS]
    runs = []
    for entry in entries:
        d, c = parse_digit_bias(entry)
        name = ColorBiasConfig(d, c, cfg.digit.primary_fraction).name
        runs.append(RunSpec(name, cfg.arch, {"digit": d, "color": c, "fraction": cfg.digit.primary_fraction}))
    if cfg.digit.include_unbiased:
        runs.append(RunSpec("unbiased", cfg.arch, {"unbiased": True}))
    return runs


def grouped_runs(cfg: ProtocolConfig) -> list[RunSpec]:
    runs = []
    for arch in cfg.grouped.archs:
        for g in cfg.grouped.favored:
            runs.append(RunSpec(f"{arch}-biased-{g}", arch, {"favored": g, "fractions": list(cfg.grouped.fractions)}))
        if cfg.grouped.include_unbiased:
            runs.append(RunSpec(f"{arch}-unbiased", arch, {"unbiased": True}))
    return runs


def _small(cfg: ProtocolConfig) -> bool:
    return cfg.scale == "small"


def _spec_record(cfg: ProtocolConfig, spec: RunSpec, data: dict) -> dict:
    """Everything a run's outcome depends on; its digest keys the cache."""
    return {
        "version": __version__,
        "task": cfg.task,
        "arch": spec.arch,
        "seed": cfg.seed,
        "scale": cfg.scale,
        "bias": spec.bias,
        "train": cfg.to_dict()["train"],
        "eval": cfg.to_dict()["eval"],
        "data": data,
    }


def _load_reused(run_dir: Path, spec: RunSpec, spec_digest: str) -> RunResult | None:
    path = run_dir / "manifest.json"
    if not path.is_file():
        return None
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except ValueError:
        return None
    if manifest.get("spec_digest") != spec_digest:
        return None
    if manifest.get("status") != "ok":
        return RunResult(spec, manifest.get("status", "failed"), run_dir, error=manifest.get("error"), reused=True)
    weights = run_dir / "weights.bin"
    if not all((run_dir / a).is_file() for a in ARTIFACTS) or file_digest(weights) != manifest.get("weights_sha256"):
        return None
    ev = json.loads((run_dir / "eval.json").read_text(encoding="utf-8"))
    report = BiasReport.from_dict(json.loads((run_dir / "bias_report.json").read_text(encoding="utf-8")))
    return RunResult(spec, "ok", run_dir, EvaluationResult(**ev["evaluation"]), report,
                     ev["few_shot"]["ratios"], manifest["weights_sha256"], reused=True)


def execute_run(cfg: ProtocolConfig, spec: RunSpec, study_dir: Path, train: GroupedDataset,
                test: GroupedDataset, criterion: str, data_record: dict, reuse: bool = True) -> RunResult:
    """Train, evaluate and audit one model; write its artifact directory."""
    run_dir = study_dir / spec.run_id
    record = _spec_record(cfg, spec, data_record)
    spec_digest = _digest(record)
    if reuse:
        cached = _load_reused(run_dir, spec, spec_digest)
        if cached is not None:
            log.info("%s: reusing %s", spec.run_id, run_dir)
            return cached
    manifest = {
        "run_id": spec.run_id,
        "spec": record,
        "spec_digest": spec_digest,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "config_text": cfg.source_text,
        "train_digest": train.digest(),
        "train_n": len(train),
        "train_counts": {str(g): int(len(i)) for g, i in train.group_indices(criterion).items()},
        "test_digest": test.digest(),
        "test_n": len(test),
    }
    model = build_model(spec.arch, train.image_shape, 10 if cfg.task == "digit" else 2,
                        seed=cfg.seed)
    log.info("%s: training %s (%d params) on %d samples", spec.run_id, spec.arch, model.param_count, len(train))
    try:
        history = train_model(model, train, cfg.train, cfg.seed)
    except NumericError as exc:
        log.error("%s diverged: %s", spec.run_id, exc)
        for name in ARTIFACTS:
            (run_dir / name).unlink(missing_ok=True)
        manifest.update(status="diverged", error=str(exc), weights_sha256=None)
        _write_text(run_dir / "manifest.json", dumps_json(manifest))
        return RunResult(spec, "diverged", run_dir, error=str(exc))
    weights_sha = save_weights(model, run_dir / "weights.bin")

    ev = cfg.eval
    images = test.inputs()
    activations = image_activations(model, images, ev.batch_size, statistic=ev.statistic)
    probs = model.predict_proba(images, ev.batch_size)
    evaluation = evaluate(probs.argmax(axis=1), test, criterion, num_classes=model.num_classes)
    report = audit(
        model, test, criterion, tau=ev.tau, layer=ev.layer, model_id=spec.run_id, weights_digest=weights_sha,
        n_bootstrap=ev.n_bootstrap, seed=cfg.seed, statistic=ev.statistic, normalize_scope=ev.normalize_scope,
        config={"eval": cfg.to_dict()["eval"], "protocol": cfg.to_dict(), "config_text": cfg.source_text},
        activations=activations, probs=probs,
    )
    few = few_shot_ratios(activations[0], activations[1], test.labels(criterion), list(test.levels[criterion]),
                          ev.few_shot_per_group, ev.few_shot_draws, cfg.seed, ev.layer)
    eval_doc = {
        "run_id": spec.run_id,
        "accuracy": evaluation.overall,
        "evaluation": evaluation.to_dict(),
        "few_shot": {"per_group": ev.few_shot_per_group, "draws": ev.few_shot_draws, "layer": ev.layer,
                     "ratios": few},
        "loss_history": history,
    }
    _write_text(run_dir / "eval.json", dumps_json(eval_doc))
    _write_text(run_dir / "bias_report.json", report.to_json())
    _write_text(run_dir / "curves.csv", report_tables(report)["curves"])
    manifest.update(status="ok", error=None, weights_sha256=weights_sha,
                    accuracy=evaluation.overall, ratio=report.verdict.ratio, biased=report.verdict.biased)
    _write_text(run_dir / "manifest.json", dumps_json(manifest))
    log.info("%s: accuracy %.4f ratio %.4f", spec.run_id, evaluation.overall, report.verdict.ratio)
    return RunResult(spec, "ok", run_dir, evaluation, report, few, weights_sha)


def _write_study_manifest(cfg: ProtocolConfig, name: str, study_dir: Path, runs: list[RunResult]) -> None:
    entries = []
    for r in runs:
        entry = {"run_id": r.spec.run_id, "arch": r.spec.arch, "bias": r.spec.bias, "status": r.status,
                 "config_digest": cfg.digest(), "weights_sha256": r.weights_sha256, "error": r.error}
        if r.ok:
            entry.update(accuracy=r.evaluation.overall, std=r.evaluation.std, ratio=r.report.verdict.ratio,
                         biased=r.report.verdict.biased)
        entries.append(entry)
    doc = {"study": name, "task": cfg.task, "seed": cfg.seed, "scale": cfg.scale, "config_digest": cfg.digest(),
           "config": cfg.to_dict(), "config_text": cfg.source_text, "runs": entries}
    _write_text(study_dir / "manifest.json", dumps_json(doc))


def select_runs(specs: list[RunSpec], only) -> list[RunSpec]:
    if not only:
        return specs
    known = {s.run_id for s in specs}
    unknown = [o for o in only if o not in known]
    if unknown:
        raise ConfigurationError(f"unknown run id(s) {unknown}; available: {sorted(known)}")
    return [s for s in specs if s.run_id in only]


def study_name(cfg: ProtocolConfig, kind: str) -> str:
    return cfg.name or f"{kind}-seed{cfg.seed}-{cfg.scale}"


def colored_mnist_data(cfg: ProtocolConfig) -> tuple[GroupedDataset, GroupedDataset]:
    """Grayscale train pool (10% at small scale) and the shared uniform-colour test set."""
    train, test = load_mnist(cfg.mnist_dir)
    rng = np.random.default_rng([cfg.seed, 0x5A])
    keep = len(train)
    if _small(cfg):
        keep = int(keep * SMALL_FRACTION)
    if cfg.digit.train_limit > 0:
        keep = min(keep, cfg.digit.train_limit)
    if keep < len(train):
        train = train.subset(np.sort(rng.permutation(len(train))[:keep]))
    if 0 < cfg.digit.test_limit < len(test):
        pick = np.random.default_rng([cfg.seed, 0x5B]).permutation(len(test))[: cfg.digit.test_limit]
        test = test.subset(np.sort(pick))
    test = colorize(test, ColorBiasConfig.uniform(seed=cfg.digit.test_color_seed))
    return train, test


def run_colored_mnist_study(cfg: ProtocolConfig, only=None, reuse: bool = True, data=None) -> StudyResult:
    """Biased colour models (one per configured digit:colour) plus the unbiased one.

    All models are evaluated and audited on one uniformly coloured test set.
    A diverging run is recorded in the manifest and the study moves on.
    """
    if cfg.task != "digit":
        raise ConfigurationError("the colored-MNIST study needs study.task = 'digit'")
    specs = select_runs(digit_runs(cfg), only)
    name = study_name(cfg, "colored-mnist")
    study_dir = Path(cfg.output_dir) / name
    gray_train, test = data or colored_mnist_data(cfg)
    assert_disjoint(gray_train, test)
    results = []
    for spec in specs:
        if spec.unbiased:
            color_cfg = ColorBiasConfig.uniform(seed=cfg.seed)
        else:
            color_cfg = ColorBiasConfig(spec.bias["digit"], spec.bias["color"], spec.bias["fraction"], cfg.seed)
        train = colorize(gray_train, color_cfg)
        data_record = {"train": gray_train.digest(), "test": test.digest(), "color": color_cfg.digest()}
        results.append(execute_run(cfg, spec, study_dir, train, test, "color", data_record, reuse))
    _write_study_manifest(cfg, name, study_dir, results)
    return StudyResult(name, study_dir, results)


def grouped_data(cfg: ProtocolConfig) -> tuple[GroupedDataset, GroupedDataset, object, int]:
    """(train pool, balanced test set, subject key, training size) from manifests or the synthetic generator."""
    g = cfg.grouped
    scale = SMALL_FRACTION if _small(cfg) else 1.0
    total_n = max(int(g.total_n * scale), 1)
    test_per_group = max(int(g.test_per_group * scale), cfg.eval.few_shot_per_group * cfg.eval.few_shot_draws)
    if g.train_manifest or g.test_manifest:
        if not (g.train_manifest and g.test_manifest):
            raise ConfigurationError("grouped.train_manifest and grouped.test_manifest must be given together")
        pool = read_manifest(g.train_manifest, "group", "train")
        test = read_manifest(g.test_manifest, "group", "test", levels=list(pool.levels["group"]))
        key = None
    else:
        # enough subjects for the favored group's share, balanced over the two classes
        per_cell = int(np.ceil(max(g.fractions) * total_n / 2 / 3)) + 1
        syn = SyntheticConfig(size=g.image_size, noise=g.synthetic_noise)
        pool = generate_grouped(per_cell, "train", cfg.seed, syn)
        test_cell = int(np.ceil(test_per_group / 2 / 3))
        test = generate_grouped(test_cell, "test", cfg.seed, syn, id_offset=10 ** 6)
        key = subject_id
    groups = list(pool.levels["group"])
    if len(groups) < 3:
        raise ConfigurationError(f"the grouped study needs at least 3 groups, got {groups}")
    test = build_group_protocol(test, "group", None, "balanced", test_per_group * len(groups), cfg.seed)
    return pool, test, key, total_n


def run_grouped_study(cfg: ProtocolConfig, only=None, reuse: bool = True) -> StudyResult:
    """Biased(k) for every favored group plus Unbiased, for each configured architecture."""
    if cfg.task != "grouped_binary":
        raise ConfigurationError("the grouped study needs study.task = 'grouped_binary'")
    specs = select_runs(grouped_runs(cfg), only)
    name = study_name(cfg, "grouped")
    study_dir = Path(cfg.output_dir) / name
    pool, test, key, total_n = grouped_data(cfg)
    assert_disjoint(pool, test, key)
    results = []
    for spec in specs:
        if spec.unbiased:
            train = build_group_protocol(pool, "group", None, "balanced", total_n, cfg.seed)
        else:
            train = build_group_protocol(pool, "group", spec.bias["favored"], spec.bias["fractions"], total_n,
                                         cfg.seed)
        assert_disjoint(train, test, key)
        data_record = {"train": train.digest(), "test": test.digest()}
        results.append(execute_run(cfg, spec, study_dir, train, test, "group", data_record, reuse))
    _write_study_manifest(cfg, name, study_dir, results)
    return StudyResult(name, study_dir, results)

