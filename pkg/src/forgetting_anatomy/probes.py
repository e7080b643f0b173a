"""Representation probes: CKA, freezing, resets, reset-and-retrain, linear probes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data.dataset import Dataset, DataSplits, TaskPair
from .errors import CompatibilityError, ConfigError, ProbeError, StateError
from .nn.layers import log_softmax, softmax
from .nn.model import ArchSpec, Model, OptimizerConfig, build_model, freeze_bottom, restore, snapshot
from .numeric import Rng
from .protocol import train_task

PROBE_CAP = 1024


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    stage: str
    matrix: np.ndarray
    fingerprint: str

    @property
    def shape(self):
        return self.matrix.shape


def probe_set(d: Dataset, cap: int = PROBE_CAP) -> Dataset:
    """First ``cap`` examples in stored order."""
    return d if len(d) <= cap else d.subset(np.arange(cap))


def _as_matrix(a) -> tuple[np.ndarray, str | None]:
    if isinstance(a, ActivationMatrix):
        return a.matrix, a.fingerprint
    return np.asarray(a, dtype=np.float64), None


def linear_cka(x, y) -> float:
    """Linear CKA between two representations of the same examples.

    Columns are mean-centred, then
    ``||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F)``. Wide matrices use the
    equivalent example-by-example Gram form.
    """
    xm, fx = _as_matrix(x)
    ym, fy = _as_matrix(y)
    if fx is not None and fy is not None and fx != fy:
        raise ProbeError(f"probe fingerprints differ: {fx} vs {fy}")
    if xm.ndim != 2 or ym.ndim != 2 or xm.shape[0] != ym.shape[0]:
        raise ProbeError(f"activation matrices must share the example axis, got {xm.shape} and {ym.shape}")
    xc = xm - xm.mean(axis=0)
    yc = ym - ym.mean(axis=0)
    m = xc.shape[0]
    if max(xc.shape[1], yc.shape[1]) > m:
        kx = xc @ xc.T
        ky = yc @ yc.T
        num = float(np.sum(kx * ky))
        dx = float(np.sqrt(np.sum(kx * kx)))
        dy = float(np.sqrt(np.sum(ky * ky)))
    else:
        num = float(np.sum((xc.T @ yc) ** 2))
        dx = float(np.linalg.norm(xc.T @ xc))
        dy = float(np.linalg.norm(yc.T @ yc))
    if dx == 0.0 or dy == 0.0:
        raise ProbeError("CKA undefined: a centred activation matrix is all zeros")
    return min(1.0, max(0.0, num / (dx * dy)))


def record_stage_activations(model: Model, probe: Dataset, stages=None, head: str | None = None) -> dict[str, ActivationMatrix]:
    stages = stages if stages is not None else range(1, model.n_stages + 1)
    fp = probe.fingerprint()
    feats = model.features(np.asarray(probe.inputs), stages, head=head)
    return {name: ActivationMatrix(name, mat, fp) for name, mat in feats.items()}


def stage_cka(before: dict[str, ActivationMatrix], after: dict[str, ActivationMatrix]) -> dict[str, float]:
    """Per-stage CKA; stages whose activations are constant get NaN."""
    out = {}
    for name in before:
        try:
            out[name] = linear_cka(before[name], after[name])
        except ProbeError:
            out[name] = float("nan")
    return out


# -- freezing -----------------------------------------------------------

@dataclass
class FreezeArm:
    k: int
    task2_curve: list[float]
    task1_final: float
    task2_final: float


def run_task1(pair: TaskPair, arch: ArchSpec, opt: OptimizerConfig, epochs: int, rng: Rng) -> tuple[Model, dict]:
    """Build a model from ``rng.derive('init')`` and train it on task 1."""
    model = build_model(arch, rng.derive("init"))
    curves = train_task(
        model, "t1", pair.task1, opt, epochs, rng.derive("shuffle").derive("task1"), rng.derive("init"),
        evals={"task1": (pair.task1.test, "t1")},
    )
    return model, curves


def task2_head(pair: TaskPair) -> str:
    return "t2" if pair.head_mode == "multi-head" else "t1"


def train_second_task(model: Model, pair: TaskPair, opt, epochs, rng: Rng, **kw) -> dict:
    h2 = task2_head(pair)
    return train_task(
        model, h2, pair.task2, opt, epochs, rng.derive("shuffle").derive("task2"), rng.derive("init"),
        evals={"task1": (pair.task1.test, "t1"), "task2": (pair.task2.test, h2)},
        **kw,
    )


def freeze_sweep(
    pair: TaskPair,
    arch: ArchSpec,
    k_values,
    opt: OptimizerConfig,
    epochs: int,
    rng: Rng,
    post_task1: Model | None = None,
) -> dict[int, FreezeArm]:
    """Train task 1 once, then for each k freeze stages 1..k and train task 2."""
    base = post_task1 if post_task1 is not None else run_task1(pair, arch, opt, epochs, rng)[0]
    out = {}
    for k in k_values:
        if not 0 <= k <= base.n_stages:
            raise ConfigError(f"freeze depth {k} outside 0..{base.n_stages}")
        model = base.clone()
        freeze_bottom(model, k)
        curves = train_second_task(model, pair, opt, epochs, rng)
        out[k] = FreezeArm(k, curves["task2"], curves["task1"][-1], curves["task2"][-1])
    return out


# -- resets -------------------------------------------------------------

def _block(model: Model, direction: str, n: int, head: str) -> list[str]:
    s = model.n_stages
    if direction == "from_top":
        idx = range(s - n + 1, s + 1)
    elif direction == "from_bottom":
        idx = range(1, n + 1)
    else:
        raise ConfigError(f"direction must be from_top or from_bottom, got {direction!r}")
    return [model.stage_unit(i, head) for i in idx]


def reset_sweep(model: Model, post_task1, direction: str, n_values, eval_set: Dataset, head: str = "t1") -> dict[int, float]:
    """Task-1 accuracy after resetting a contiguous block of stages to post-task-1 values.

    The output head is never reset. The model is returned to its incoming
    state after every arm.
    """
    if post_task1.fingerprint != model.fingerprint():
        raise CompatibilityError("post-task-1 snapshot does not match the model")
    current = snapshot(model, "post-task-2")
    x = np.asarray(eval_set.inputs)
    out = {}
    for n in n_values:
        if not 0 <= n <= model.n_stages:
            raise ConfigError(f"reset size {n} outside 0..{model.n_stages}")
        restore(model, post_task1, _block(model, direction, n, head))
        out[n] = model.accuracy(x, eval_set.labels, head=head)
        restore(model, current)
    return out


def reset_and_retrain(
    model: Model,
    post_task1,
    n_frozen_bottom: int,
    task1: DataSplits,
    opt: OptimizerConfig,
    epochs: int,
    rng: Rng,
    head: str = "t1",
) -> float:
    """Keep stages 1..N at their current values (frozen), reset the rest to
    post-task-1 values, retrain them and the head on task 1; returns test accuracy."""
    if not 0 <= n_frozen_bottom <= model.n_stages:
        raise ConfigError(f"N={n_frozen_bottom} outside 0..{model.n_stages}")
    m = model.clone()
    restore(m, post_task1, _block(m, "from_top", m.n_stages - n_frozen_bottom, head))
    m.set_active_head(head)
    freeze_bottom(m, n_frozen_bottom)
    train_task(m, head, task1, opt, epochs, rng.derive("shuffle").derive(f"retrain-{n_frozen_bottom}"), rng.derive("init"))
    return m.accuracy(np.asarray(task1.test.inputs), task1.test.labels, head=head)


# -- linear probe -------------------------------------------------------

@dataclass
class ProbeResult:
    accuracy: float
    stage_weight_mass: dict[str, float]
    train_accuracy: float
    iterations: int


def _stack(acts) -> tuple[np.ndarray, list[tuple[str, int]], str | None]:
    if isinstance(acts, dict):
        acts = list(acts.values())
    mats, blocks, fps = [], [], set()
    for a in acts:
        m, fp = _as_matrix(a)
        name = a.stage if isinstance(a, ActivationMatrix) else f"block{len(blocks) + 1}"
        mats.append(m)
        blocks.append((name, m.shape[1]))
        fps.add(fp)
    if len({m.shape[0] for m in mats}) != 1:
        raise ProbeError("activation blocks have different example counts")
    if len(fps - {None}) > 1:
        raise ProbeError("activation blocks come from different probe sets")
    return np.concatenate(mats, axis=1), blocks, next(iter(fps - {None}), None)


def linear_probe(
    train_acts,
    train_labels: np.ndarray,
    test_acts,
    test_labels: np.ndarray,
    l2: float = 1e-3,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> ProbeResult:
    """Multinomial logistic regression on concatenated per-stage activations.

    Columns are standardized with training statistics. Per-stage weight mass
    is the summed absolute weight of each stage's block, normalized to 1.
    """
    xtr, blocks, _ = _stack(train_acts)
    xte, blocks_te, _ = _stack(test_acts)
    if [b for b in blocks] != [b for b in blocks_te]:
        raise ProbeError("train and held-out activations have different blocks")
    if not (np.all(np.isfinite(xtr)) and np.all(np.isfinite(xte))):
        raise ProbeError("non-finite activations")
    mean = xtr.mean(axis=0)
    std = xtr.std(axis=0)
    live = std > 1e-12
    if not live.any():
        raise ProbeError("every activation column is constant")
    std = np.where(live, std, 1.0)
    ztr = (xtr - mean) / std * live
    zte = (xte - mean) / std * live
    y = np.asarray(train_labels, dtype=np.int64)
    k = int(max(y.max(), np.max(test_labels)) + 1)
    n, d = ztr.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    def objective(flat):
        w = flat[: d * k].reshape(d, k)
        b = flat[d * k :]
        logits = ztr @ w + b
        logp = log_softmax(logits)
        loss = -np.sum(onehot * logp) / n + 0.5 * l2 * np.sum(w * w)
        g = (np.exp(logp) - onehot) / n
        grad_w = ztr.T @ g + l2 * w
        return loss, np.concatenate([grad_w.ravel(), g.sum(axis=0)])

    res = minimize(objective, np.zeros(d * k + k), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-8})
    w = res.x[: d * k].reshape(d, k)
    b = res.x[d * k :]
    acc = float(np.mean((zte @ w + b).argmax(axis=1) == np.asarray(test_labels)))
    train_acc = float(np.mean((ztr @ w + b).argmax(axis=1) == y))
    mass, start = {}, 0
    for name, width in blocks:
        mass[name] = float(np.abs(w[start : start + width]).sum())
        start += width
    total = sum(mass.values())
    if total > 0:
        mass = {kk: v / total for kk, v in mass.items()}
    return ProbeResult(acc, mass, train_acc, int(res.nit))


# -- reports ------------------------------------------------------------

@dataclass
class ForgettingReport:
    acc_before: dict[str, float]
    acc_after: dict[str, float]
    percent_drop: dict[str, float | None]
    tp_before: dict[str, float | None] = field(default_factory=dict)
    tp_after: dict[str, float | None] = field(default_factory=dict)
    cka: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def percent_drop(before: float, after: float) -> float | None:
    if before is None or after is None or before == 0 or math.isnan(before) or math.isnan(after):
        return None
    return 100.0 * (before - after) / before


def true_positive_fractions(pred: np.ndarray, labels: np.ndarray, class_names) -> dict[str, float | None]:
    """Per-class recall; classes absent from ``labels`` map to None."""
    out = {}
    for c, name in enumerate(class_names):
        mask = labels == c
        out[name] = float(np.mean(pred[mask] == c)) if mask.any() else None
    return out


def forgetting_report(
    acc_before: dict[str, float],
    acc_after: dict[str, float],
    tp_before: dict | None = None,
    tp_after: dict | None = None,
    cka: dict | None = None,
) -> ForgettingReport:
    missing = [t for t in acc_before if t not in acc_after]
    if missing or not acc_before:
        raise StateError(f"missing post-training evaluations for {missing or 'all tasks'}")
    return ForgettingReport(
        acc_before=dict(acc_before),
        acc_after={t: acc_after[t] for t in acc_before},
        percent_drop={t: percent_drop(acc_before[t], acc_after[t]) for t in acc_before},
        tp_before=dict(tp_before or {}),
        tp_after=dict(tp_after or {}),
        cka=dict(cka or {}),
    )


def head_predictions(model: Model, d: Dataset, head: str) -> np.ndarray:
    return model.predict(np.asarray(d.inputs), head=head).argmax(axis=1)


__all__ = [
    "ActivationMatrix",
    "ForgettingReport",
    "FreezeArm",
    "ProbeResult",
    "forgetting_report",
    "freeze_sweep",
    "linear_cka",
    "linear_probe",
    "percent_drop",
    "probe_set",
    "record_stage_activations",
    "reset_and_retrain",
    "reset_sweep",
    "run_task1",
    "softmax",
    "stage_cka",
    "train_second_task",
    "true_positive_fractions",
]
