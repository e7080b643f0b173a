"""Synthetic stand-ins for CIFAR used at desk scale.

Two generators:

* :func:`synth_cluster_task` - Gaussian clusters with a similarity dial
  between the two tasks' mean subspaces.
* :func:`synth_base` - a labelled "world" with a class hierarchy. Latent codes
  are drawn from per-mode Gaussians (group centre + class offset + mode offset)
  and rendered to inputs by one fixed random nonlinear map shared by every
  class, so lower-level structure is common to all tasks while the class
  boundaries are not linearly separable in input space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError
from ..numeric import Rng
from .cifar import CIFAR10_CLASSES, CIFAR100_COARSE, CIFAR100_FINE, CIFAR100_HIERARCHY
from .dataset import Dataset, DataSplits, TaskPair

# CIFAR-10 classes grouped as object (0) / animal (1)
CIFAR10_GROUPS = (0, 0, 1, 1, 1, 1, 1, 1, 0, 0)
ANIMAL_OBJECT = ("object", "animal")


@dataclass
class ClusterConfig:
    n_classes: int = 2
    dims: int = 16
    separation: float = 1.0
    radius: float = 3.0
    spread: float = 1.0
    n_train: int = 200
    n_test: int = 100
    head_mode: str = "multi-head"

    def validate(self):
        if self.n_classes < 2:
            raise ConfigError("clusters: need at least 2 classes")
        if self.dims < 2 * self.n_classes:
            raise ConfigError(f"clusters: dims must be >= 2 * n_classes = {2 * self.n_classes}")
        if not 0.0 <= self.separation <= 1.0:
            raise ConfigError("clusters: separation must lie in [0, 1]")
        if self.spread <= 0 or self.radius < 0:
            raise ConfigError("clusters: spread must be > 0 and radius >= 0")


def _orthonormal(rng: Rng, dims: int, k: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dims, dims)))
    return q[:, :k]


def synth_cluster_task(config: ClusterConfig, rng: Rng) -> TaskPair:
    """Per-class Gaussian clusters for two tasks.

    Task-2 means are task-1 means rotated by ``separation * pi/2`` towards an
    orthogonal subspace: 0 gives identical tasks, 1 orthogonal mean subspaces.
    """
    config.validate()
    k, d = config.n_classes, config.dims
    basis = _orthonormal(rng.derive("basis"), d, 2 * k)
    u, v = basis[:, :k], basis[:, k:]
    phi = config.separation * np.pi / 2
    means1 = config.radius * u.T
    means2 = config.radius * (np.cos(phi) * u + np.sin(phi) * v).T
    names = tuple(f"c{i}" for i in range(k))

    def sample(means, n, split, scope):
        r = rng.derive(scope)
        labels = np.repeat(np.arange(k), n)
        x = means[labels] + config.spread * r.normal(size=(k * n, d))
        order = r.permutation(k * n)
        return Dataset(x[order], labels[order], names, split)

    t1 = DataSplits(sample(means1, config.n_train, "train", "t1-train"), sample(means1, config.n_test, "test", "t1-test"))
    t2 = DataSplits(sample(means2, config.n_train, "train", "t2-train"), sample(means2, config.n_test, "test", "t2-test"))
    return TaskPair(t1, t2, config.head_mode, f"gaussian clusters, separation {config.separation}")


@dataclass
class SynthConfig:
    """Parameters of the synthetic labelled world (see :func:`synth_base`)."""

    hierarchy: str = "cifar10"  # cifar10 | cifar100
    input_shape: tuple[int, ...] = (64,)
    n_train_per_class: int = 200
    n_test_per_class: int = 100
    latent_dim: int = 16
    modes_per_class: int = 3
    group_scale: float = 1.0
    class_scale: float = 1.0
    mode_scale: float = 0.8
    within_scale: float = 0.5
    render_width: int = 96
    noise: float = 0.2
    smoothness: float = 1.0

    def validate(self):
        if self.hierarchy not in ("cifar10", "cifar100"):
            raise ConfigError(f"synthetic hierarchy must be cifar10 or cifar100, got {self.hierarchy!r}")
        if self.n_train_per_class < 1 or self.n_test_per_class < 1:
            raise ConfigError("synthetic: need at least one example per class")
        if self.latent_dim < 1 or self.modes_per_class < 1 or self.render_width < 1:
            raise ConfigError("synthetic: latent_dim, modes_per_class, render_width must be positive")


def _render_basis(rng: Rng, width: int, shape: tuple[int, ...], smoothness: float) -> np.ndarray:
    """(width, prod(shape)) output patterns; spatially smooth for image shapes."""
    raw = rng.normal(size=(width,) + tuple(shape))
    if len(shape) == 3 and smoothness > 0:
        raw = np.stack([gaussian_filter(r, sigma=(0, smoothness, smoothness), mode="wrap") for r in raw])
    flat = raw.reshape(width, -1)
    return flat / np.linalg.norm(flat, axis=1, keepdims=True)


def synth_base(config: SynthConfig, rng: Rng) -> DataSplits:
    """Labelled train/test splits with CIFAR class names and a class hierarchy."""
    config.validate()
    if config.hierarchy == "cifar10":
        names = CIFAR10_CLASSES
        groups = np.array(CIFAR10_GROUPS)
        coarse_names = ANIMAL_OBJECT
    else:
        names = CIFAR100_FINE
        f2c = {f: CIFAR100_COARSE.index(c) for c, subs in CIFAR100_HIERARCHY.items() for f in subs}
        groups = np.array([f2c[f] for f in names])
        coarse_names = CIFAR100_COARSE
    n_cls, d = len(names), config.latent_dim
    world = rng.derive("world")
    group_c = config.group_scale * world.normal(size=(len(coarse_names), d))
    class_c = group_c[groups] + config.class_scale * world.normal(size=(n_cls, d))
    modes = class_c[:, None, :] + config.mode_scale * world.normal(size=(n_cls, config.modes_per_class, d))
    a = world.normal(size=(d, config.render_width)) / np.sqrt(d)
    shift = world.normal(size=config.render_width) * 0.5
    out_dim = int(np.prod(config.input_shape))
    b = _render_basis(world, config.render_width, config.input_shape, config.smoothness) * np.sqrt(out_dim / config.render_width)

    def sample(n_per_class: int, split: str) -> Dataset:
        r = rng.derive(f"sample-{split}")
        labels = np.repeat(np.arange(n_cls), n_per_class)
        mode = r.integers(0, config.modes_per_class, size=labels.size)
        z = modes[labels, mode] + config.within_scale * r.normal(size=(labels.size, d))
        h = np.tanh(z @ a + shift)
        x = h @ b + config.noise * r.normal(size=(labels.size, out_dim))
        order = r.permutation(labels.size)
        return Dataset(
            x[order].reshape((-1,) + tuple(config.input_shape)),
            labels[order],
            names,
            split,
            coarse_labels=groups[labels[order]],
            coarse_names=coarse_names,
            meta={"source": f"synthetic-{config.hierarchy}"},
        )

    return DataSplits(sample(config.n_train_per_class, "train"), sample(config.n_test_per_class, "test"))
