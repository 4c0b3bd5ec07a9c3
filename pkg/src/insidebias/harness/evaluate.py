from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import GroupedDataset
from ..tensor_core import SGD, Model, train_step
from ..tensor_core.model import batches
from .config import TrainConfig

log = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    """Per-group accuracy with its mean (Avg) and population std (Std)."""

    criterion: str
    per_group: dict[str, float]
    counts: dict[str, int]
    avg: float
    std: float
    overall: float
    confusion: dict[str, list[list[int]]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def best_group(self) -> str:
        return max(self.per_group, key=self.per_group.get)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(per_group: dict[str, float]) -> tuple[float, float]:
    acc = np.array(list(per_group.values()), dtype=np.float64)
    return float(acc.mean()), float(acc.std())


def predict(model: Model, ds: GroupedDataset, batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(ds), batch_size):
        logits, _ = model.forward(ds.inputs(slice(start, start + batch_size)))
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.array([], dtype=np.int64)


def evaluate(model_or_predictions, ds: GroupedDataset, criterion: str, batch_size: int = 256,
             num_classes: int | None = None) -> EvaluationResult:
    """Accuracy inside each group of ``criterion``.

    Accepts a model or an array of precomputed class predictions. Declared
    groups without samples are skipped and noted in ``warnings``.
    """
    if isinstance(model_or_predictions, Model):
        preds = predict(model_or_predictions, ds, batch_size)
        num_classes = num_classes or model_or_predictions.num_classes
    else:
        preds = np.asarray(model_or_predictions)
    num_classes = num_classes or int(max(preds.max(initial=0), ds.task.max(initial=0)) + 1)
    parts = ds.group_indices(criterion)
    warnings = [f"group {g!r} has no samples; excluded" for g in ds.levels[criterion] if g not in parts]
    per_group, counts, confusion = {}, {}, {}
    for g, idx in parts.items():
        per_group[str(g)] = float((preds[idx] == ds.task[idx]).mean())
        counts[str(g)] = int(len(idx))
        cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(cm, (ds.task[idx], preds[idx]), 1)
        confusion[str(g)] = cm.tolist()
    avg, std = summarize(per_group) if per_group else (float("nan"), float("nan"))
    overall = float((preds == ds.task).mean()) if len(ds) else float("nan")
    return EvaluationResult(criterion, per_group, counts, avg, std, overall, confusion, warnings)


def train_model(model: Model, ds: GroupedDataset, cfg: TrainConfig, seed: int,
                progress_every: int = 200) -> list[float]:
    """Seeded SGD training; returns the mean loss of every epoch.

    Raises :class:`~insidebias.errors.NumericError` on divergence.
    """
    rng = np.random.default_rng([seed, 0x7EA1])
    opt = SGD(model, cfg.momentum)
    history = []
    t0 = time.time()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        total, steps = 0.0, 0
        for step, idx in enumerate(batches(len(ds), cfg.batch_size, rng)):
            total += train_step(model, (ds.inputs(idx), ds.task[idx]), lr, opt, rng)
            steps += 1
            if progress_every and step % progress_every == 0:
                log.info("epoch %d step %d loss %.4f (%.0fs)", epoch, step, total / steps, time.time() - t0)
        history.append(total / max(steps, 1))
        log.info("epoch %d done: mean loss %.4f lr %g", epoch, history[-1], lr)
    return history
