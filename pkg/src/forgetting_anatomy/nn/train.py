"""Epoch loop on top of :func:`train_step`."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError
from ..numeric import Rng
from .model import Model, OptimizerConfig, train_step


def iterate_batches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s : s + batch_size]


def train_epochs(
    model: Model,
    inputs: np.ndarray,
    labels: np.ndarray,
    opt: OptimizerConfig,
    epochs: int,
    rng: Rng,
    extra_loss=None,
    step_fn: Callable | None = None,
    on_epoch: Callable[[int], None] | None = None,
    epoch_data: Callable[[int], tuple[np.ndarray, np.ndarray]] | None = None,
) -> list[float]:
    """Train the active head route for ``epochs`` passes; returns mean loss per epoch.

    Data order is reshuffled every epoch from ``rng``. ``step_fn`` replaces
    the plain :func:`train_step` (used by replay), with the same signature
    minus ``extra_loss``. ``epoch_data(epoch)``, when given, supplies fresh
    ``(inputs, labels)`` at the start of each epoch (used by mixup re-pairing).
    """
    losses = []
    for epoch in range(epochs):
        if epoch_data is not None:
            inputs, labels = epoch_data(epoch)
        total, count = 0.0, 0
        for idx in iterate_batches(inputs.shape[0], opt.batch_size, rng):
            if step_fn is None:
                loss = train_step(model, inputs[idx], labels[idx], opt, extra_loss=extra_loss)
            else:
                loss = step_fn(model, inputs[idx], labels[idx], opt)
            if not np.isfinite(loss):
                raise NumericError(f"loss diverged in epoch {epoch}")
            total += loss * idx.size
            count += idx.size
        losses.append(total / max(count, 1))
        if on_epoch is not None:
            on_epoch(epoch)
    return losses
