"""Protocol configuration (TOML).

Example::

    [study]
    task = "digit"          # digit | grouped_binary
    arch = "vgg_small"      # vgg_small | resnet_small
    seed = 0
    output_dir = "out"
    scale = "full"          # full | small (10% of the training data)

    [digit]                 # colored-MNIST runs
    biased = ["0:red", "1:green", "2:blue"]   # "all" for the 30-model sweep
    primary_fraction = 0.9
    include_unbiased = true

    [grouped]               # grouped_binary runs
    total_n = 1500
    favored = ["A", "B", "C"]
    fractions = [0.90, 0.05, 0.05]

    [train]
    epochs = 5
    batch_size = 64
    lr = 0.01
    lr_decay_epochs = [4]
    lr_decay_factor = 0.1
    momentum = 0.9

    [eval]
    tau = 0.9
    layer = "last"

Unknown keys are rejected. The raw text is kept for provenance echoes.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigurationError

DATA_ENV = "INSIDEBIAS_DATA"


def data_dir() -> Path:
    return Path(os.environ.get(DATA_ENV, Path.home() / ".cache" / "insidebias"))


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.01
    lr_decay_epochs: list = field(default_factory=lambda: [4])
    lr_decay_factor: float = 0.1
    momentum: float = 0.9

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay_factor ** drops


GROUPED_TRAIN_DEFAULTS = {"epochs": 16, "batch_size": 32, "lr_decay_epochs": [12]}


@dataclass
class EvalConfig:
    tau: float = 0.9
    layer: str = "last"
    statistic: str = "max"
    normalize_scope: str = "model"
    few_shot_draws: int = 10
    few_shot_per_group: int = 5
    n_bootstrap: int = 200
    batch_size: int = 256


@dataclass
class DigitConfig:
    mnist_dir: str = ""
    test_color_seed: int = 2020
    biased: list = field(default_factory=lambda: ["0:red", "1:green", "2:blue"])
    primary_fraction: float = 0.9
    include_unbiased: bool = True
    train_limit: int = 0    # > 0 caps the training pool (after the scale cut), for quick checks
    test_limit: int = 0


@dataclass
class GroupedConfig:
    train_manifest: str = ""
    test_manifest: str = ""
    image_size: int = 32
    total_n: int = 1500
    test_per_group: int = 1000
    favored: list = field(default_factory=lambda: ["A", "B", "C"])
    fractions: list = field(default_factory=lambda: [0.90, 0.05, 0.05])
    include_unbiased: bool = True
    archs: list = field(default_factory=lambda: ["vgg_small", "resnet_small"])
    synthetic_noise: float = 0.25


@dataclass
class ProtocolConfig:
    task: str = "digit"
    arch: str = "vgg_small"
    seed: int = 0
    output_dir: str = "out"
    scale: str = "full"
    name: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    digit: DigitConfig = field(default_factory=DigitConfig)
    grouped: GroupedConfig = field(default_factory=GroupedConfig)
    source_text: str = field(default="", repr=False, compare=False)

    def __post_init__(self):
        if self.task not in ("digit", "grouped_binary"):
            raise ConfigurationError(f"study.task must be 'digit' or 'grouped_binary', got {self.task!r}")
        if self.arch not in ("vgg_small", "resnet_small"):
            raise ConfigurationError(f"study.arch must be vgg_small or resnet_small, got {self.arch!r}")
        if self.scale not in ("full", "small"):
            raise ConfigurationError(f"study.scale must be 'full' or 'small', got {self.scale!r}")
        if self.train.epochs < 1 or self.train.batch_size < 1 or self.train.lr < 0:
            raise ConfigurationError("train.epochs and train.batch_size must be >= 1 and lr >= 0")

    def to_dict(self) -> dict:
        # where artifacts land is not part of the protocol
        d = asdict(self)
        d.pop("source_text")
        d.pop("output_dir")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> ProtocolConfig:
        twin = copy.deepcopy(self)
        for key, value in changes.items():
            section, _, attr = key.partition(".")
            if attr:
                setattr(getattr(twin, section), attr, value)
            else:
                setattr(twin, section, value)
        return twin

    @property
    def mnist_dir(self) -> Path:
        return Path(self.digit.mnist_dir) if self.digit.mnist_dir else data_dir() / "mnist"


_SECTIONS = {"train": TrainConfig, "eval": EvalConfig, "digit": DigitConfig, "grouped": GroupedConfig}
_TOP = {"task", "arch", "seed", "output_dir", "scale", "name"}


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(raw: dict, source_text: str = "") -> ProtocolConfig:
    raw = dict(raw)
    study = dict(raw.pop("study", {}))
    unknown = set(study) - _TOP
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [study]: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = dict(raw.pop(name, {}))
        if name == "train" and study.get("task") == "grouped_binary":
            values = {**GROUPED_TRAIN_DEFAULTS, **values}
        sections[name] = _build(cls, values, name)
    if raw:
        raise ConfigurationError(f"unknown section(s): {sorted(raw)}")
    try:
        return ProtocolConfig(**study, **sections, source_text=source_text)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path) -> ProtocolConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return config_from_dict(raw, text)
