"""Forgetting mitigations: EWC, replay, headfirst training, task-specific stages."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from .data.dataset import Dataset, DataSplits
from .errors import ConfigError, DataError, DimensionError
from .nn.layers import softmax
from .nn.model import Model, OptimizerConfig, set_trainability, train_step
from .nn.train import iterate_batches
from .numeric import Rng
from .protocol import ensure_head, train_task


# -- EWC ----------------------------------------------------------------

def ewc_units(model: Model, head_mode: str) -> list[str]:
    """Units anchored by EWC: the body in multi-head mode, everything in single-head mode."""
    units = model.units()
    if head_mode == "multi-head":
        return [u for u in units if not u.startswith("head:")]
    return units


def estimate_fisher_diag(
    model: Model,
    data: Dataset,
    rng: Rng,
    n_samples: int = 200,
    head: str | None = None,
    units=None,
    label_mode: str = "empirical",
) -> dict[str, np.ndarray]:
    """Diagonal Fisher: mean over examples of squared log-likelihood gradients.

    ``label_mode="empirical"`` uses the stored labels; ``"sampled"`` draws
    each label from the model's own predictive distribution. When the data
    holds more than ``n_samples`` examples a uniform subset is used.
    """
    if n_samples < 1 or len(data) == 0:
        raise ConfigError("Fisher estimate needs a nonempty subset")
    if label_mode not in ("empirical", "sampled"):
        raise ConfigError(f"fisher label mode must be empirical or sampled, got {label_mode!r}")
    units = list(units) if units is not None else model.units()
    idx = np.arange(len(data)) if len(data) <= n_samples else np.sort(rng.derive("subset").permutation(len(data))[:n_samples])
    x = np.asarray(data.inputs)[idx]
    if label_mode == "sampled":
        probs = softmax(model.predict(x, head=head))
        draw = rng.derive("labels").uniform(size=len(idx))
        y = np.minimum((probs.cumsum(axis=1) < draw[:, None]).sum(axis=1), probs.shape[1] - 1)
    else:
        y = data.hard_labels()[idx]

    saved_flags = dict(model.trainable)
    saved_head = model.active_head
    set_trainability(model, lambda u: u in units)
    if head is not None:
        model.set_active_head(head)
    params = model.named_params()
    fisher = {k: np.zeros_like(v) for k, v in params.items() if k.split("/")[0] in units}
    try:
        for i in range(len(idx)):
            _, grads = model.loss_and_grads(x[i : i + 1], y[i : i + 1])
            for k, g in grads.items():
                fisher[k] += g * g
    finally:
        model.trainable.update(saved_flags)
        model.active_head = saved_head
    return {k: v / len(idx) for k, v in fisher.items()}


@dataclass
class EwcState:
    """Anchor parameters, Fisher diagonal and strength of an EWC penalty."""

    anchor: dict[str, np.ndarray]
    fisher: dict[str, np.ndarray]
    strength: float
    n_samples: int

    def __post_init__(self):
        if set(self.anchor) != set(self.fisher):
            raise DimensionError("EWC anchor and Fisher cover different parameters")
        for k, f in self.fisher.items():
            if f.shape != self.anchor[k].shape:
                raise DimensionError(f"EWC {k}: Fisher shape {f.shape} vs anchor {self.anchor[k].shape}")
            if np.any(f < 0):
                raise ConfigError(f"EWC {k}: Fisher diagonal must be nonnegative")
        if self.strength < 0:
            raise ConfigError("EWC strength must be >= 0")

    def __call__(self, model: Model):
        return ewc_penalty_and_grad(model, self)


def make_ewc_state(model: Model, fisher: dict[str, np.ndarray], strength: float, n_samples: int) -> EwcState:
    params = model.named_params()
    return EwcState({k: params[k].copy() for k in fisher}, fisher, strength, n_samples)


def ewc_penalty_and_grad(model: Model, state: EwcState) -> tuple[float, dict[str, np.ndarray]]:
    """``(lam/2) sum F (theta - theta*)^2`` and its gradient ``lam F (theta - theta*)``."""
    params = model.named_params()
    value = 0.0
    grads = {}
    for k, anchor in state.anchor.items():
        p = params.get(k)
        if p is None or p.shape != anchor.shape:
            raise DimensionError(f"EWC parameter {k}: model has {None if p is None else p.shape}, anchor {anchor.shape}")
        diff = p - anchor
        fd = state.fisher[k] * diff
        value += 0.5 * state.strength * float(np.sum(fd * diff))
        grads[k] = state.strength * fd
    return value, grads


def ewc_penalty(model: Model, state: EwcState) -> float:
    return ewc_penalty_and_grad(model, state)[0]


# -- replay -------------------------------------------------------------

@dataclass
class ReplayBuffer:
    inputs: np.ndarray
    labels: np.ndarray
    head_ids: np.ndarray
    capacity: int
    fraction: float

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"replay fraction must lie in [0, 1], got {self.fraction}")
        if len(self.inputs) > self.capacity:
            raise ConfigError(f"replay buffer holds {len(self.inputs)} > capacity {self.capacity}")
        if not (len(self.inputs) == len(self.labels) == len(self.head_ids)):
            raise DataError("replay buffer fields have different lengths")
        if self.labels.ndim != 1:
            raise DataError("replay buffer stores hard labels only")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_dataset(cls, d: Dataset, head_id: str, capacity: int, fraction: float, rng: Rng) -> "ReplayBuffer":
        """Uniform subsample (without replacement) of ``capacity`` examples."""
        if capacity < 0:
            raise ConfigError("replay capacity must be >= 0")
        idx = np.sort(rng.permutation(len(d))[: min(capacity, len(d))])
        return cls(
            np.asarray(d.inputs)[idx].copy(),
            d.hard_labels()[idx].copy(),
            np.full(idx.size, head_id, dtype=object),
            capacity,
            fraction,
        )

    def sample(self, n: int, rng: Rng):
        """``n`` examples drawn uniformly with replacement."""
        if n and len(self) == 0:
            raise ConfigError("replay buffer is empty")
        idx = rng.integers(0, len(self), size=n)
        return self.inputs[idx], self.labels[idx], self.head_ids[idx]


def replay_split(batch_size: int, fraction: float) -> tuple[int, int]:
    """(new, replayed) counts for one batch; at least one replayed example when fraction > 0."""
    n_rep = int(math.floor(fraction * batch_size + 0.5))
    if fraction > 0:
        n_rep = max(1, n_rep)
    return batch_size - n_rep, n_rep


def replay_train_step(
    model: Model,
    batch: np.ndarray,
    labels: np.ndarray,
    buffer: ReplayBuffer,
    opt: OptimizerConfig,
    rng: Rng,
    head_id: str,
    n_replay: int | None = None,
) -> float:
    """One step on ``batch`` (routed to ``head_id``) plus replayed buffer examples."""
    if n_replay is None:
        n_replay = replay_split(opt.batch_size, buffer.fraction)[1]
    if n_replay == 0:
        return train_step(model, batch, labels, opt)
    if len(buffer) == 0:
        raise ConfigError("replay fraction > 0 with an empty buffer")
    if labels.ndim != 1:
        raise DataError("replay needs hard labels for the new task")
    rx, ry, rh = buffer.sample(n_replay, rng)
    x = np.concatenate([batch, rx]) if len(batch) else rx
    y = np.concatenate([labels, ry]) if len(batch) else ry
    heads = np.concatenate([np.full(len(batch), head_id, dtype=object), rh])
    return train_step(model, x, y, opt, head_ids=heads)


def train_with_replay(
    model: Model,
    head_id: str,
    data: DataSplits,
    buffer: ReplayBuffer,
    opt: OptimizerConfig,
    epochs: int,
    rng: Rng,
    init_rng: Rng,
    evals: dict | None = None,
) -> dict[str, list[float]]:
    """Train a task with replay; one epoch is one pass over the new data.

    With fraction 0 this is exactly the plain task training. With fraction
    1 an epoch has as many steps as a plain epoch, all from the buffer.
    """
    n_new, n_rep = replay_split(opt.batch_size, buffer.fraction)
    if n_rep == 0:
        return train_task(model, head_id, data, opt, epochs, rng, init_rng, evals=evals)
    draw = rng.derive("replay")
    x2 = np.asarray(data.train.inputs)
    y2 = data.train.labels
    n = len(x2)
    steps = math.ceil(n / (n_new if n_new else opt.batch_size))
    chunk = max(n_new, 1)

    def epoch_step(model, xb, yb, opt):
        return replay_train_step(model, xb, yb, buffer, opt, draw, head_id, n_replay=n_rep)

    ensure_head(model, head_id, data.train.n_classes, init_rng)
    model.reset_optimizer_state()
    evals = evals or {}
    curves = {name: [] for name in evals}

    def record():
        for name, (d, h) in evals.items():
            curves[name].append(model.accuracy(np.asarray(d.inputs), d.labels, head=h))

    record()
    for _ in range(epochs):
        if n_new:
            for idx in iterate_batches(n, chunk, rng):
                epoch_step(model, x2[idx], y2[idx], opt)
        else:
            for _ in range(steps):
                epoch_step(model, x2[:0], y2[:0], opt)
        record()
    model.set_active_head(head_id)
    return curves


# -- headfirst ----------------------------------------------------------

def headfirst_train(
    model: Model,
    head_id: str,
    data: DataSplits,
    epochs_head_only: int,
    opt: OptimizerConfig,
    epochs: int,
    rng: Rng,
    init_rng: Rng,
    evals: dict | None = None,
) -> dict[str, list[float]]:
    """Train only the new head for ``epochs_head_only`` epochs, then the full network.

    The head-only phase shuffles from its own sub-scope, so with zero
    head-only epochs the run is identical to plain training.
    """
    if epochs_head_only < 0:
        raise ConfigError("headfirst epochs must be >= 0")
    if epochs_head_only:
        ensure_head(model, head_id, data.train.n_classes, init_rng)
        saved = dict(model.trainable)
        set_trainability(model, lambda u: u == f"head:{head_id}")
        train_task(model, head_id, data, opt, epochs_head_only, rng.derive("headfirst"), init_rng)
        model.trainable.update(saved)
    return train_task(model, head_id, data, opt, epochs, rng, init_rng, evals=evals)


# -- task-specific stages -----------------------------------------------

def make_task_specific(model: Model, n_top_stages: int) -> Model:
    """Copy of ``model`` whose top ``n`` stages are duplicated per head.

    Existing heads each get their own branch initialized from the current
    top stages; heads attached later copy the active head's branch.
    """
    if not 0 <= n_top_stages <= model.n_stages:
        raise ConfigError(f"task-specific stages must lie in 0..{model.n_stages}, got {n_top_stages}")
    if model.n_task_specific:
        raise ConfigError("model already has task-specific stages")
    m = model.clone()
    if n_top_stages == 0:
        return m
    m.n_task_specific = n_top_stages
    top = m.stages[m.n_shared :]
    for hid in m.heads:
        m.branches[hid] = copy.deepcopy(top)
        for j in range(n_top_stages):
            m.trainable[f"stage{m.n_shared + j + 1}@{hid}"] = m.trainable[f"stage{m.n_shared + j + 1}"]
    if m.heads:
        for j in range(n_top_stages):
            m.trainable.pop(f"stage{m.n_shared + j + 1}", None)
    return m
