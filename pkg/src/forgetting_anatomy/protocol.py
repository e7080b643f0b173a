"""Sequential task training shared by probes, mitigations and the harness."""

from __future__ import annotations

import numpy as np

from .data.dataset import Dataset, DataSplits
from .nn.model import Model, OptimizerConfig
from .nn.train import train_epochs
from .numeric import Rng


def ensure_head(model: Model, head_id: str, n_classes: int, rng: Rng) -> None:
    """Attach ``head_id`` if missing (init drawn from ``rng.derive(head_id)``) and activate it."""
    if head_id not in model.heads:
        model.attach_head(head_id, n_classes, rng.derive(f"head:{head_id}"))
    model.set_active_head(head_id)


def train_task(
    model: Model,
    head_id: str,
    data: DataSplits,
    opt: OptimizerConfig,
    epochs: int,
    rng: Rng,
    init_rng: Rng,
    evals: dict[str, tuple[Dataset, str]] | None = None,
    extra_loss=None,
    step_fn=None,
    epoch_data=None,
) -> dict[str, list[float]]:
    """Train one task from a fresh optimizer state; returns per-epoch eval accuracies.

    ``evals`` maps a curve name to ``(dataset, head_id)``. Curves start with
    the accuracy before the first epoch.
    """
    ensure_head(model, head_id, data.train.n_classes, init_rng)
    model.reset_optimizer_state()
    evals = evals or {}
    curves: dict[str, list[float]] = {name: [] for name in evals}

    def record(_epoch=None):
        for name, (d, h) in evals.items():
            curves[name].append(model.accuracy(np.asarray(d.inputs), d.labels, head=h))

    record()
    labels = data.train.labels
    train_epochs(
        model,
        np.asarray(data.train.inputs),
        labels,
        opt,
        epochs,
        rng,
        extra_loss=extra_loss,
        step_fn=step_fn,
        on_epoch=record if evals else None,
        epoch_data=epoch_data,
    )
    model.set_active_head(head_id)
    return curves
