from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Inputs plus hard (integer) or soft (row-stochastic) labels."""

    inputs: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    split: str = "train"
    coarse_labels: np.ndarray | None = None
    coarse_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")
        n = self.inputs.shape[0]
        if self.labels.shape[0] != n:
            raise DataError(f"{n} inputs but {self.labels.shape[0]} labels")
        k = len(self.class_names)
        if self.labels.ndim == 1:
            if n and (self.labels.min() < 0 or self.labels.max() >= k):
                raise DataError(f"hard labels must lie in [0, {k})")
        elif self.labels.ndim == 2:
            if self.labels.shape[1] != k:
                raise DataError(f"soft labels have {self.labels.shape[1]} columns for {k} classes")
            if n and np.abs(self.labels.sum(axis=1) - 1.0).max() > 1e-9:
                raise DataError("soft-label rows must sum to 1")
        else:
            raise DataError("labels must be a vector or a matrix")
        if self.coarse_labels is not None and self.coarse_labels.shape[0] != n:
            raise DataError("coarse labels must match the example count")
        for arr in (self.inputs, self.labels):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def is_soft(self) -> bool:
        return self.labels.ndim == 2

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def hard_labels(self) -> np.ndarray:
        return self.labels.argmax(axis=1) if self.is_soft else self.labels

    def soft_labels(self, n_classes: int | None = None) -> np.ndarray:
        k = n_classes or self.n_classes
        if self.is_soft:
            if self.labels.shape[1] > k:
                raise DataError("cannot shrink soft labels")
            out = np.zeros((len(self), k))
            out[:, : self.labels.shape[1]] = self.labels
            return out
        out = np.zeros((len(self), k))
        out[np.arange(len(self)), self.labels] = 1.0
        return out

    def class_index(self, c) -> int:
        if isinstance(c, (int, np.integer)):
            if not 0 <= c < self.n_classes:
                raise ConfigError(f"class index {c} out of range")
            return int(c)
        try:
            return self.class_names.index(c)
        except ValueError:
            raise ConfigError(f"unknown class {c!r}") from None

    def subset(self, idx, **changes) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        kw = dict(
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            class_names=self.class_names,
            split=self.split,
            coarse_labels=None if self.coarse_labels is None else self.coarse_labels[idx],
            coarse_names=self.coarse_names,
            meta=dict(self.meta),
        )
        kw.update(changes)
        return Dataset(**kw)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update("|".join(self.class_names).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class DataSplits:
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class TaskPair:
    task1: DataSplits
    task2: DataSplits
    head_mode: str = "multi-head"
    description: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.head_mode not in ("multi-head", "single-head"):
            raise ConfigError(f"head_mode must be multi-head or single-head, got {self.head_mode!r}")
        if self.head_mode == "single-head" and self.task1.train.class_names != self.task2.train.class_names:
            raise ConfigError("single-head tasks must share one label space")
