"""Task construction: class splits, superclass shift, "other" category, mixup."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError, DimensionError
from ..numeric import Rng
from .dataset import Dataset, DataSplits, TaskPair

DEFAULT_SPLIT = (
    ("airplane", "automobile", "bird", "cat", "deer"),
    ("dog", "frog", "horse", "ship", "truck"),
)


def select_classes(d: Dataset, classes: list[int]) -> Dataset:
    """Examples of ``classes``, relabeled 0..k-1 in the given order."""
    hard = d.hard_labels()
    keep = np.flatnonzero(np.isin(hard, classes))
    remap = np.full(d.n_classes, -1, dtype=np.int64)
    remap[classes] = np.arange(len(classes))
    return d.subset(
        keep,
        labels=remap[hard[keep]],
        class_names=tuple(d.class_names[c] for c in classes),
    )


def make_split_task(base: DataSplits, classes1, classes2, description: str = "") -> TaskPair:
    """Two tasks over disjoint class subsets of one dataset, one head each."""
    c1 = [base.train.class_index(c) for c in classes1]
    c2 = [base.train.class_index(c) for c in classes2]
    overlap = set(c1) & set(c2)
    if overlap:
        names = sorted(base.train.class_names[i] for i in overlap)
        raise ConfigError(f"split classes overlap: {names}")
    if not c1 or not c2:
        raise ConfigError("both tasks need at least one class")
    return TaskPair(
        task1=DataSplits(select_classes(base.train, c1), select_classes(base.test, c1)),
        task2=DataSplits(select_classes(base.train, c2), select_classes(base.test, c2)),
        head_mode="multi-head",
        description=description or f"split {list(classes1)} -> {list(classes2)}",
    )


def _fine_to_coarse(d: Dataset) -> dict[int, int]:
    if d.coarse_labels is None:
        raise ConfigError("superclass tasks need a dataset with coarse labels")
    out: dict[int, int] = {}
    for f, c in zip(d.labels.tolist(), d.coarse_labels.tolist()):
        out.setdefault(f, c)
    return out


def _superclass_task(d: Dataset, supers: list[int], subs: dict, f2c: dict) -> Dataset:
    fine_ids = []
    fine_to_label = {}
    for pos, sc in enumerate(supers):
        sc_name = d.coarse_names[sc]
        members = subs.get(sc_name, subs.get(sc))
        if not members:
            raise ConfigError(f"no subclasses given for superclass {sc_name!r}")
        for m in members:
            fi = d.class_index(m)
            if f2c.get(fi) != sc:
                raise ConfigError(f"subclass {d.class_names[fi]!r} does not belong to superclass {sc_name!r}")
            fine_ids.append(fi)
            fine_to_label[fi] = pos
    keep = np.flatnonzero(np.isin(d.labels, fine_ids))
    labels = np.array([fine_to_label[f] for f in d.labels[keep].tolist()], dtype=np.int64)
    return d.subset(keep, labels=labels, class_names=tuple(d.coarse_names[s] for s in supers))


def make_superclass_shift_task(base: DataSplits, superclasses, subclasses1: dict, subclasses2: dict) -> TaskPair:
    """Single-head superclass classification whose input subclasses change between tasks."""
    train = base.train
    if not train.coarse_names:
        raise ConfigError("base dataset has no superclass names")
    supers = []
    for s in superclasses:
        if isinstance(s, (int, np.integer)):
            supers.append(int(s))
        elif s in train.coarse_names:
            supers.append(train.coarse_names.index(s))
        else:
            raise ConfigError(f"unknown superclass {s!r}")
    f2c = _fine_to_coarse(train)
    pairs = []
    for subs in (subclasses1, subclasses2):
        pairs.append(
            DataSplits(
                _superclass_task(base.train, supers, subs, f2c),
                _superclass_task(base.test, supers, subs, f2c),
            )
        )
    return TaskPair(
        task1=pairs[0],
        task2=pairs[1],
        head_mode="single-head",
        description=f"superclass shift over {[train.coarse_names[s] for s in supers]}",
        meta={"subclasses1": {k: list(v) for k, v in subclasses1.items()},
              "subclasses2": {k: list(v) for k, v in subclasses2.items()}},
    )


def add_other_category(task1: Dataset, pool: Dataset, name: str = "other") -> Dataset:
    """Append every pool example under one new trailing "other" label."""
    clash = set(task1.class_names) & set(pool.class_names[c] for c in np.unique(pool.hard_labels()))
    if clash:
        raise ConfigError(f"other-category pool shares classes with the task: {sorted(clash)}")
    if pool.input_shape != task1.input_shape and len(pool):
        raise DimensionError(f"pool inputs {pool.input_shape} differ from task inputs {task1.input_shape}")
    k = task1.n_classes
    inputs = np.concatenate([task1.inputs, pool.inputs.reshape((len(pool),) + task1.input_shape)])
    labels = np.concatenate([task1.hard_labels(), np.full(len(pool), k, dtype=np.int64)])
    meta = dict(task1.meta)
    meta["other_pool_size"] = len(pool)
    return Dataset(inputs, labels, task1.class_names + (name,), task1.split, meta=meta)


def mixup_interpolate(d1: Dataset, d2: Dataset, lam: float, rng: Rng | None = None, pairing: str = "random") -> Dataset:
    """Convex combination ``lam * d2 + (1 - lam) * d1`` of inputs and soft labels.

    ``pairing="random"`` matches each d1 example with a distinct d2 example
    through a seeded random bijection on ``min(len(d1), len(d2))`` examples;
    ``"identity"`` pairs by position. The label space is d1's; d2 labels map
    onto its first columns.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixing weight must lie in [0, 1], got {lam}")
    if d1.input_shape != d2.input_shape:
        raise DimensionError(f"input shapes differ: {d1.input_shape} vs {d2.input_shape}")
    if d2.n_classes > d1.n_classes:
        raise DataError("second dataset has more classes than the shared label space")
    n = min(len(d1), len(d2))
    if pairing == "identity":
        i1 = i2 = np.arange(n)
    elif pairing == "random":
        if rng is None:
            raise ConfigError("random pairing needs an rng")
        i1 = np.arange(n) if len(d1) == n else np.sort(rng.permutation(len(d1))[:n])
        i2 = rng.permutation(len(d2))[:n]
    else:
        raise ConfigError(f"unknown pairing {pairing!r}")
    k = d1.n_classes
    x = lam * d2.inputs[i2] + (1.0 - lam) * d1.inputs[i1]
    y = lam * d2.soft_labels(k)[i2] + (1.0 - lam) * d1.soft_labels(k)[i1]
    meta = dict(d1.meta)
    meta["mixup_lambda"] = lam
    return Dataset(x, y, d1.class_names, d1.split, meta=meta)


def input_stats(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(d.inputs)
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    mean = x.mean(axis=axes)
    std = x.std(axis=axes)
    return np.atleast_1d(mean), np.atleast_1d(np.where(std > 0, std, 1.0))


def standardize_pair(pair: TaskPair) -> TaskPair:
    """Standardize all four datasets with constants from the task-1 train split."""
    mean, std = input_stats(pair.task1.train)

    def apply(d: Dataset) -> Dataset:
        x = np.asarray(d.inputs)
        if x.ndim == 4:
            x = (x - mean[None, :, None, None]) / std[None, :, None, None]
        else:
            x = (x - mean) / std
        meta = dict(d.meta)
        meta["standardized_with"] = "task1-train"
        return d.subset(np.arange(len(d)), inputs=x, meta=meta)

    return TaskPair(
        task1=DataSplits(apply(pair.task1.train), apply(pair.task1.test)),
        task2=DataSplits(apply(pair.task2.train), apply(pair.task2.test)),
        head_mode=pair.head_mode,
        description=pair.description,
        meta=dict(pair.meta),
    )
