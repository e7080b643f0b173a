"""Frozen-feature model of forgetting.

Features ``g(x)`` are taken from a trained body and then held fixed; only a
linear read-out is trained on the second task. For a full-batch SGD step
with learning rate ``eta`` the task-1 outputs then move by exactly

    delta f(x) = -eta * sum_x' Theta(x, x') dL/df(x')

with the overlap kernel ``Theta(x, x') = g(x) . g(x')``. In the multi-head
variant ``f_i(x) = g(x) theta^T h_i`` and the same change is multiplied by
``h_2^T h_1`` once the second head is frozen.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .data.dataset import Dataset
from .errors import CompatibilityError, ConfigError, DimensionError, NumericError
from .nn.layers import log_softmax, softmax
from .nn.model import Model, ParamSnapshot, restore
from .numeric import Rng, givens_product, svd


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows are examples, columns the ``p`` frozen features."""

    values: np.ndarray
    fingerprint: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError(f"feature matrix must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else str(p).encode())
    return h.hexdigest()[:16]


def snapshot_digest(snap: ParamSnapshot) -> str:
    h = hashlib.sha256(snap.fingerprint.encode())
    for k in sorted(snap.params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(snap.params[k]).tobytes())
    return h.hexdigest()[:16]


def extract_features(model: Model, snap: ParamSnapshot | None, data: Dataset, tap: int | None = None, head: str | None = None) -> FeatureMatrix:
    """Post-stage activations at ``tap`` (default: the last stage, i.e. the head input)."""
    m = model
    if snap is not None:
        if snap.fingerprint != model.fingerprint():
            raise CompatibilityError(f"snapshot {snap.label!r} does not match the model")
        m = model.clone()
        restore(m, snap)
    tap = m.n_stages if tap is None else tap
    name = f"stage{tap}"
    feats = m.features(np.asarray(data.inputs), [tap], head=head)[name]
    src = snapshot_digest(snap) if snap is not None else "live"
    return FeatureMatrix(feats, _digest(src, data.fingerprint(), name))


@dataclass(frozen=True, eq=False)
class OverlapKernel:
    values: np.ndarray
    rows: str
    cols: str


def overlap_kernel(g_test: FeatureMatrix, g_train: FeatureMatrix) -> OverlapKernel:
    """``Theta = G_test G_train^T``."""
    if g_test.p != g_train.p:
        raise DimensionError(f"feature counts differ: {g_test.p} vs {g_train.p}")
    return OverlapKernel(g_test.values @ g_train.values.T, g_test.fingerprint, g_train.fingerprint)


def lemma_bound(kernel_row, grad, eta: float) -> float:
    """``eta * ||Theta(x)|| * ||dL/df||``; bounds one step's change of one output."""
    kernel_row = np.asarray(kernel_row, dtype=np.float64).ravel()
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if kernel_row.size != grad.size:
        raise DimensionError(f"kernel row has {kernel_row.size} entries, gradient {grad.size}")
    return float(eta * np.linalg.norm(kernel_row) * np.linalg.norm(grad))


def _ce_and_grad(logits: np.ndarray, targets: np.ndarray, reduction: str):
    """Cross-entropy (hard or soft targets) and dL/dlogits."""
    k = logits.shape[1]
    if targets.ndim == 1:
        t = np.zeros_like(logits)
        t[np.arange(len(targets)), targets] = 1.0
    else:
        if targets.shape[1] != k:
            raise DimensionError(f"soft targets have {targets.shape[1]} classes, outputs {k}")
        t = targets
    loss = -np.sum(t * log_softmax(logits))
    grad = softmax(logits) * t.sum(axis=1, keepdims=True) - t
    if reduction == "mean":
        loss /= len(logits)
        grad = grad / len(logits)
    return float(loss), grad


@dataclass
class FrozenFeatureModel:
    """Linear read-out over frozen features.

    Single-head: ``f = G theta`` with ``theta`` of shape ``(p, K)``.
    Multi-head: ``theta`` has shape ``(A, p)`` and ``heads`` maps an id to an
    ``(A, K)`` matrix, ``f_i = G theta^T h_i``.
    """

    theta: np.ndarray
    lr: float
    heads: dict[str, np.ndarray] | None = None
    reduction: str = "mean"

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64)
        if self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"reduction must be mean or sum, got {self.reduction!r}")
        if self.heads is not None:
            self.heads = {k: np.array(v, dtype=np.float64) for k, v in self.heads.items()}
            for k, h in self.heads.items():
                if h.shape[0] != self.theta.shape[0]:
                    raise DimensionError(f"head {k} has {h.shape[0]} rows, linear layer {self.theta.shape[0]}")

    @property
    def multihead(self) -> bool:
        return self.heads is not None

    def outputs(self, g: np.ndarray, head: str | None = None) -> np.ndarray:
        if not self.multihead:
            return g @ self.theta
        return g @ self.theta.T @ self.heads[head]


def _as_values(g) -> np.ndarray:
    return g.values if isinstance(g, FeatureMatrix) else np.asarray(g, dtype=np.float64)


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    target = labels if labels.ndim == 1 else labels.argmax(axis=1)
    return float(np.mean(logits.argmax(axis=1) == target))


@dataclass
class Trajectory:
    """Per-step record of a frozen-feature simulation (row 0 is the initial state)."""

    step: list[int] = field(default_factory=list)
    phase: list[str] = field(default_factory=list)
    task2_loss: list[float] = field(default_factory=list)
    task1_acc: list[float] = field(default_factory=list)
    bound: list[float] = field(default_factory=list)
    realized_delta_max: list[float] = field(default_factory=list)
    kernel_error: list[float] = field(default_factory=list)
    violations: list[int] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    task1_logits: list[np.ndarray] = field(default_factory=list)

    COLUMNS = ("step", "task2_loss", "task1_acc", "bound", "realized_delta_max", "weight_distance")

    def rows(self) -> list[dict]:
        drift = weight_drift_report(self)
        return [
            {
                "step": self.step[i],
                "task2_loss": self.task2_loss[i],
                "task1_acc": self.task1_acc[i],
                "bound": self.bound[i],
                "realized_delta_max": self.realized_delta_max[i],
                "weight_distance": drift["distance"][i],
            }
            for i in range(len(self.step))
        ]

    @property
    def max_kernel_error(self) -> float:
        return max(self.kernel_error, default=0.0)

    @property
    def total_violations(self) -> int:
        return int(sum(self.violations))


def _record(traj, step, phase, loss2, f1, y1, weights, bound=0.0, delta=0.0, kerr=0.0, viol=0):
    traj.step.append(step)
    traj.phase.append(phase)
    traj.task2_loss.append(loss2)
    traj.task1_acc.append(_accuracy(f1, y1))
    traj.bound.append(bound)
    traj.realized_delta_max.append(delta)
    traj.kernel_error.append(kerr)
    traj.violations.append(viol)
    traj.weights.append(weights.copy())
    traj.task1_logits.append(f1.copy())


def _batches(n: int, batch_size: int | None, rng: Rng | None):
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    if rng is None:
        raise ConfigError("mini-batch simulation needs an rng")
    order = rng.permutation(n)
    return [order[s : s + batch_size] for s in range(0, n, batch_size)]


def _check_step(theta_k, d, eta, df_real, df_pred, slack):
    """Kernel-consistency error, largest per-output bound and violation count."""
    row_norms = np.linalg.norm(theta_k, axis=1)
    grad_norms = np.linalg.norm(d, axis=0)
    bounds = eta * row_norms[:, None] * grad_norms[None, :]
    viol = int(np.sum(np.abs(df_real) > bounds + slack))
    return float(np.max(np.abs(df_real - df_pred), initial=0.0)), float(bounds.max(initial=0.0)), viol


def head_sgd_simulate(
    model: FrozenFeatureModel,
    g2,
    y2: np.ndarray,
    steps: int,
    g1,
    y1: np.ndarray,
    batch_size: int | None = None,
    rng: Rng | None = None,
    slack: float = 1e-9,
) -> Trajectory:
    """Train the single-head read-out on task 2 and track task-1 outputs.

    Each step compares the realized change of the task-1 outputs with the
    kernel prediction and with the per-output bound. ``model.theta`` is
    updated in place.
    """
    if model.multihead:
        raise ConfigError("use multihead_simulate for multi-head models")
    g1v, g2v = _as_values(g1), _as_values(g2)
    if g1v.shape[1] != model.theta.shape[0] or g2v.shape[1] != model.theta.shape[0]:
        raise DimensionError(f"features have {g1v.shape[1]}/{g2v.shape[1]} columns, read-out expects {model.theta.shape[0]}")
    kernel = g1v @ g2v.T
    eta = model.lr
    traj = Trajectory()
    f1 = model.outputs(g1v)
    loss2, _ = _ce_and_grad(model.outputs(g2v), y2, model.reduction)
    _record(traj, 0, "head", loss2, f1, y1, model.theta)
    step = 0
    while step < steps:
        for idx in _batches(len(g2v), batch_size, rng):
            if step >= steps:
                break
            step += 1
            loss_b, d = _ce_and_grad(model.outputs(g2v[idx]), y2[idx], model.reduction)
            if not np.isfinite(loss_b):
                raise NumericError(f"simulation diverged at step {step}")
            model.theta -= eta * (g2v[idx].T @ d)
            f1_new = model.outputs(g1v)
            df = f1_new - f1
            kerr, bound, viol = _check_step(kernel[:, idx], d, eta, df, -eta * kernel[:, idx] @ d, slack)
            f1 = f1_new
            loss2, _ = _ce_and_grad(model.outputs(g2v), y2, model.reduction)
            if not np.isfinite(loss2):
                raise NumericError(f"simulation diverged at step {step}")
            _record(traj, step, "head", loss2, f1, y1, model.theta, bound, float(np.max(np.abs(df), initial=0.0)), kerr, viol)
    return traj


def multihead_simulate(
    model: FrozenFeatureModel,
    g2,
    y2: np.ndarray,
    g1,
    y1: np.ndarray,
    head_steps: int,
    body_steps: int,
    head1: str = "t1",
    head2: str = "t2",
    slack: float = 1e-9,
) -> Trajectory:
    """Two phases, full batch: train ``head2`` alone, then freeze it and train ``theta``.

    In the second phase the task-1 outputs move by
    ``-eta Theta dL/df h2^T h1``; the trajectory records the discrepancy.
    """
    if not model.multihead or head1 not in model.heads or head2 not in model.heads:
        raise ConfigError("multi-head simulation needs both heads")
    g1v, g2v = _as_values(g1), _as_values(g2)
    if g1v.shape[1] != model.theta.shape[1] or g2v.shape[1] != model.theta.shape[1]:
        raise DimensionError(f"features have {g1v.shape[1]}/{g2v.shape[1]} columns, linear layer expects {model.theta.shape[1]}")
    h1, h2 = model.heads[head1], model.heads[head2]
    kernel = g1v @ g2v.T
    eta = model.lr
    traj = Trajectory()
    f1 = model.outputs(g1v, head1)
    loss2, _ = _ce_and_grad(model.outputs(g2v, head2), y2, model.reduction)
    _record(traj, 0, "head", loss2, f1, y1, model.theta)
    for step in range(1, head_steps + body_steps + 1):
        phase = "head" if step <= head_steps else "body"
        _, d = _ce_and_grad(model.outputs(g2v, head2), y2, model.reduction)
        if phase == "head":
            h2 -= eta * (model.theta @ g2v.T @ d)
            pred = np.zeros_like(f1)
            row = np.zeros(kernel.shape[0])
        else:
            model.theta -= eta * (h2 @ d.T @ g2v)
            pred = -eta * kernel @ d @ (h2.T @ h1)
            row = None
        f1_new = model.outputs(g1v, head1)
        df = f1_new - f1
        if row is None:
            # per-output bound with the effective gradient dL/df h2^T h1
            kerr, bound, viol = _check_step(kernel, d @ (h2.T @ h1), eta, df, pred, slack)
        else:
            kerr, bound, viol = float(np.max(np.abs(df - pred), initial=0.0)), 0.0, int(np.sum(np.abs(df) > slack))
        f1 = f1_new
        loss2, _ = _ce_and_grad(model.outputs(g2v, head2), y2, model.reduction)
        if not np.isfinite(loss2):
            raise NumericError(f"simulation diverged at step {step}")
        _record(traj, step, phase, loss2, f1, y1, model.theta, bound, float(np.max(np.abs(df), initial=0.0)), kerr, viol)
    return traj


def weight_drift_report(traj: Trajectory) -> dict[str, list[float]]:
    """L2 distance and cosine similarity of each recorded read-out to the first one."""
    if not traj.weights:
        return {"distance": [], "cosine": []}
    w0 = traj.weights[0].ravel()
    n0 = np.linalg.norm(w0)
    dist, cos = [], []
    for w in traj.weights:
        w = w.ravel()
        dist.append(float(np.linalg.norm(w - w0)))
        nw = np.linalg.norm(w)
        cos.append(1.0 if np.array_equal(w, w0) else (float(w @ w0 / (nw * n0)) if nw and n0 else float("nan")))
    return {"distance": dist, "cosine": cos}


def rotation_basis(basis_from) -> np.ndarray:
    """Right singular vectors (rows) of the task-1 example-by-feature matrix."""
    return svd(_as_values(basis_from), full=True).v


def rotate_features(g, theta: float, basis_from) -> FeatureMatrix:
    """Apply ``R(theta)`` to every example's feature vector.

    ``R = V^T Givens(theta) V`` where ``V`` comes from the SVD of the task-1
    features; pairs the strongest task-1 direction with the weakest, the
    second strongest with the second weakest and so on.
    """
    gv = _as_values(g)
    p = gv.shape[1]
    if p < 2:
        raise ConfigError("rotation needs at least 2 features")
    basis = rotation_basis(basis_from)
    if basis.shape != (p, p):
        raise DimensionError(f"basis shape {basis.shape} does not match p={p}")
    r = givens_product(theta, p, basis)
    fp = g.fingerprint if isinstance(g, FeatureMatrix) else "array"
    return FeatureMatrix(gv @ r.T, _digest(fp, "rot", repr(float(theta))))


def frozen_head_init(g1, y1: np.ndarray, n_classes: int, lr: float, steps: int, rng: Rng | None = None, init_std: float = 0.0) -> FrozenFeatureModel:
    """Fit a single-head read-out on task 1 by full-batch SGD."""
    g1v = _as_values(g1)
    theta = np.zeros((g1v.shape[1], n_classes))
    if init_std:
        if rng is None:
            raise ConfigError("random read-out init needs an rng")
        theta = init_std * rng.normal(size=theta.shape)
    model = FrozenFeatureModel(theta, lr)
    head_sgd_simulate(model, g1v, y1, steps, g1v, y1)
    return model
