from __future__ import annotations

import numpy as np

from ..errors import CapacityError, ConfigurationError, GroupLookupError
from .dataset import GroupedDataset

BIASED_FRACTIONS = (0.90, 0.05, 0.05)


def group_counts(groups: list, favored, fractions, total_n: int) -> dict:
    """Samples per group. Non-favored counts are rounded down and the favored
    group absorbs the remainder. ``fractions="balanced"`` gives equal shares.

    ``fractions`` lists the favored group's share first, then the others in
    ``groups`` order.
    """
    if total_n < 1:
        raise ConfigurationError("total_n must be positive")
    if favored is None:
        favored = groups[0]
    if favored not in groups:
        raise GroupLookupError(f"favored group {favored!r} not among {groups}")
    others = [g for g in groups if g != favored]
    if isinstance(fractions, str):
        if fractions != "balanced":
            raise ConfigurationError(f"fractions must be a list or 'balanced', got {fractions!r}")
        share = {g: 1.0 / len(groups) for g in groups}
    else:
        fractions = [float(f) for f in fractions]
        if len(fractions) != len(groups):
            raise ConfigurationError(f"{len(fractions)} fractions for {len(groups)} groups")
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
            raise ConfigurationError(f"fractions must be non-negative and sum to 1, got {fractions}")
        share = dict(zip([favored, *others], fractions))
    counts = {g: int(np.floor(share[g] * total_n + 1e-9)) for g in others}
    counts[favored] = total_n - sum(counts.values())
    return {g: counts[g] for g in groups}


def build_group_protocol(ds: GroupedDataset, criterion: str, favored=None, fractions=BIASED_FRACTIONS,
                         total_n: int = 18000, seed: int = 0, balance_task: bool = True) -> GroupedDataset:
    """Seeded subsample of ``ds`` with the requested group mix.

    Within each group the task classes are split as evenly as possible.
    """
    parts = ds.group_indices(criterion)
    groups = list(ds.levels[criterion])
    counts = group_counts(groups, favored, fractions, total_n)
    classes = np.unique(ds.task)
    rng = np.random.default_rng([seed, 0x9A0])
    chosen = []
    for g in groups:
        idx = parts.get(g, np.array([], dtype=np.int64))
        need = counts[g]
        if need > len(idx):
            raise CapacityError(str(g), need, len(idx))
        if not balance_task:
            chosen.append(rng.permutation(idx)[:need])
            continue
        per_class = np.full(len(classes), need // len(classes))
        per_class[rng.permutation(len(classes))[: need % len(classes)]] += 1
        for cls, k in zip(classes, per_class):
            pool = idx[ds.task[idx] == cls]
            if k > len(pool):
                raise CapacityError(f"{g}/task={cls}", int(k), len(pool))
            chosen.append(rng.permutation(pool)[:k])
    selected = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    out = ds.subset(selected)
    out.provenance["protocol"] = {
        "criterion": criterion,
        "favored": None if favored is None else str(favored),
        "fractions": fractions if isinstance(fractions, str) else list(fractions),
        "total_n": total_n,
        "seed": seed,
        "counts": {str(g): int(c) for g, c in counts.items()},
    }
    return out
