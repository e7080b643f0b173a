"""One function per experiment kind; each runs a single seed.

Every kind returns a :class:`SeedResult`: accuracy curves, an optional
forgetting report, a per-stage CKA table and named row tables that the
report step turns into CSV files and plots.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import analytic as A
from .. import mitigations as M
from .. import probes as P
from ..data import (
    Dataset,
    DataSplits,
    SynthConfig,
    TaskPair,
    add_other_category,
    load_cifar10_splits,
    load_cifar100_splits,
    make_split_task,
    make_superclass_shift_task,
    mixup_interpolate,
    standardize_pair,
    synth_base,
)
from ..data.builders import select_classes
from ..data.cifar import DATA_ROOT_ENV, data_root
from ..errors import ConfigError, DataError
from ..nn import ArchSpec, Model, OptimizerConfig, build_model, save_snapshot, snapshot
from ..numeric import Rng
from ..protocol import train_task
from .config import ExperimentConfig
from .seeding import RngScopes


@dataclass
class SeedResult:
    curves: dict[str, list[float]] = field(default_factory=dict)
    report: dict | None = None
    cka: dict[str, float] = field(default_factory=dict)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)


class SeedDir:
    """Artifact sink for one seed; paths are relative to the run root."""

    def __init__(self, root: Path, name: str):
        self.root = root
        self.name = name

    def path(self, filename: str) -> tuple[Path, str]:
        rel = f"{self.name}/{filename}"
        return self.root / rel, rel


# -- shared building blocks ------------------------------------------------

def opt_config(cfg: ExperimentConfig) -> OptimizerConfig:
    return OptimizerConfig(**dataclasses.asdict(cfg.optim))


def arch_spec(cfg: ExperimentConfig, input_shape, multiplier: float | None = None) -> ArchSpec:
    a = cfg.arch
    return ArchSpec(
        kind=a.kind,
        input_shape=tuple(input_shape),
        widths=a.widths,
        fc_widths=a.fc_widths,
        kernel_size=a.kernel_size,
        pool=a.pool,
        width_multiplier=a.width_multiplier if multiplier is None else multiplier,
    )


def load_base(cfg: ExperimentConfig, scopes: RngScopes, hierarchy: str = "cifar10") -> DataSplits:
    if cfg.task.source == "synthetic":
        synth = SynthConfig(hierarchy=hierarchy, **dataclasses.asdict(cfg.task.synth))
        return synth_base(synth, scopes.take("data"))
    root = data_root()
    if root is None:
        raise DataError(f"task.source = cifar needs ${DATA_ROOT_ENV} to point at the dataset root")
    if hierarchy == "cifar10":
        return load_cifar10_splits(root / "cifar-10-batches-bin")
    return load_cifar100_splits(root / "cifar-100-binary")


def prepare(cfg: ExperimentConfig, pair: TaskPair) -> TaskPair:
    return standardize_pair(pair) if cfg.task.standardize else pair


def split_pair(cfg: ExperimentConfig, base: DataSplits, classes2=None) -> TaskPair:
    return prepare(cfg, make_split_task(base, cfg.task.classes1, classes2 or cfg.task.classes2))


def save(model: Model, label: str, sink: SeedDir, result: SeedResult) -> None:
    path, rel = sink.path(f"{label}.fgtc")
    save_snapshot(snapshot(model, label), path)
    result.artifacts.append(rel)


@dataclass
class Baseline:
    pair: TaskPair
    arch: ArchSpec
    opt: OptimizerConfig
    rng: Rng
    m1: Model
    post1: object
    c1: dict
    m2: Model
    c2: dict
    probe: object
    acts1: dict
    acts2: dict
    cka: dict[str, float]


def library_rng(scopes: RngScopes) -> Rng:
    """Master Rng for library calls, which derive ``init`` and ``shuffle`` themselves."""
    scopes.take("init")
    scopes.take("shuffle")
    return scopes.master


def baseline(cfg: ExperimentConfig, pair: TaskPair, rng: Rng, multiplier: float | None = None) -> Baseline:
    arch = arch_spec(cfg, pair.task1.train.input_shape, multiplier)
    opt = opt_config(cfg)
    m1, c1 = P.run_task1(pair, arch, opt, cfg.train.epochs_task1, rng)
    post1 = snapshot(m1, "post-task-1")
    probe = P.probe_set(pair.task1.test, cfg.probe.cap)
    acts1 = P.record_stage_activations(m1, probe, head="t1")
    m2 = m1.clone()
    c2 = P.train_second_task(m2, pair, opt, cfg.train.epochs_task2, rng)
    acts2 = P.record_stage_activations(m2, probe, head="t1")
    return Baseline(pair, arch, opt, rng, m1, post1, c1, m2, c2, probe, acts1, acts2, P.stage_cka(acts1, acts2))


def accuracy(model: Model, d, head: str) -> float:
    return model.accuracy(np.asarray(d.inputs), d.labels, head=head)


def tp(model: Model, d, head: str) -> dict:
    return P.true_positive_fractions(P.head_predictions(model, d, head), d.hard_labels(), d.class_names)


def base_report(b: Baseline) -> dict:
    h2 = P.task2_head(b.pair)
    t1 = b.pair.task1.test
    before = {"task1": accuracy(b.m1, t1, "t1")}
    after = {"task1": accuracy(b.m2, t1, "t1"), "task2": accuracy(b.m2, b.pair.task2.test, h2)}
    return P.forgetting_report(before, after, tp(b.m1, t1, "t1"), tp(b.m2, t1, "t1"), b.cka).to_dict()


def base_result(b: Baseline, sink: SeedDir) -> SeedResult:
    res = SeedResult(
        curves={"task1/task1": b.c1["task1"], "task2/task1": b.c2["task1"], "task2/task2": b.c2["task2"]},
        report=base_report(b),
        cka=dict(b.cka),
    )
    res.tables["cka"] = [{"stage": s, "cka": v} for s, v in b.cka.items()]
    save(b.m1, "post-task-1", sink, res)
    save(b.m2, "post-task-2", sink, res)
    return res


def top_mean(cka: dict[str, float], n: int = 2) -> float:
    return float(np.mean(list(cka.values())[-n:]))


# -- kinds -------------------------------------------------------------------

def run_anatomy(cfg, scopes, sink):
    rng = library_rng(scopes)
    b = baseline(cfg, split_pair(cfg, load_base(cfg, scopes)), rng)
    res = base_result(b, sink)
    arms = P.freeze_sweep(b.pair, b.arch, cfg.probe.freeze_k, b.opt, cfg.train.epochs_task2, rng, post_task1=b.m1)
    res.tables["freeze"] = [{"k": k, "task2_final": a.task2_final, "task1_final": a.task1_final} for k, a in arms.items()]
    for k, a in arms.items():
        res.curves[f"freeze{k}/task2"] = a.task2_curve
    top = P.reset_sweep(b.m2, b.post1, "from_top", cfg.probe.reset_n, b.pair.task1.test)
    bottom = P.reset_sweep(b.m2, b.post1, "from_bottom", cfg.probe.reset_n, b.pair.task1.test)
    res.tables["reset"] = [{"n": n, "from_top": top[n], "from_bottom": bottom[n]} for n in cfg.probe.reset_n]
    return res


def param_distance(model: Model, anchor, units) -> float:
    params = model.named_params()
    return float(np.sqrt(sum(np.sum((params[k] - v) ** 2) for k, v in anchor.params.items() if k.split("/")[0] in units)))


def _arm_row(b: Baseline, model: Model, curves: dict, units) -> dict:
    after = P.stage_cka(b.acts1, P.record_stage_activations(model, b.probe, head="t1"))
    row = {"task1_final": curves["task1"][-1], "task2_final": curves["task2"][-1], "top2_cka": top_mean(after)}
    row.update({f"cka_{s}": v for s, v in after.items()})
    row["param_distance"] = param_distance(model, b.post1, units)
    row["params_digest"] = A.snapshot_digest(snapshot(model, "arm"))
    return row


def run_mitigation(cfg, scopes, sink):
    rng = library_rng(scopes)
    b = baseline(cfg, split_pair(cfg, load_base(cfg, scopes)), rng)
    res = base_result(b, sink)
    units = M.ewc_units(b.m1, b.pair.head_mode)
    h2 = P.task2_head(b.pair)
    evals = {"task1": (b.pair.task1.test, "t1"), "task2": (b.pair.task2.test, h2)}
    shuffle2 = rng.derive("shuffle").derive("task2")
    res.tables["baseline"] = [{"arm": "baseline", **_arm_row(b, b.m2, b.c2, units)}]

    capacity = cfg.replay.capacity or max(1, len(b.pair.task1.train) // 10)
    buffer = M.ReplayBuffer.from_dataset(b.pair.task1.train, "t1", capacity, 0.0, scopes.take("buffer-subset"))
    rows = []
    for rho in cfg.replay.fraction:
        m = b.m1.clone()
        curves = M.train_with_replay(m, h2, b.pair.task2, dataclasses.replace(buffer, fraction=rho), b.opt,
                                     cfg.train.epochs_task2, shuffle2, rng.derive("init"), evals)
        rows.append({"fraction": rho, **_arm_row(b, m, curves, units)})
        res.curves[f"replay{rho}/task1"] = curves["task1"]
    res.tables["replay"] = rows

    fisher = M.estimate_fisher_diag(b.m1, b.pair.task1.train, scopes.take("fisher-subset"), cfg.ewc.fisher_samples,
                                    head="t1", units=units, label_mode=cfg.ewc.label_mode)
    rows = []
    for lam in cfg.ewc.lambda_:
        m = b.m1.clone()
        state = M.make_ewc_state(m, fisher, lam, cfg.ewc.fisher_samples)
        curves = P.train_second_task(m, b.pair, b.opt, cfg.train.epochs_task2, rng, extra_loss=state)
        rows.append({"lambda": lam, **_arm_row(b, m, curves, units)})
        res.curves[f"ewc{lam}/task1"] = curves["task1"]
    res.tables["ewc"] = rows
    return res


def _semantic_rows(variant: str, before: dict, after: dict) -> list[dict]:
    rows = []
    for c in before:
        b, a = before[c], after[c]
        rows.append({"variant": variant, "class": c, "tp_before": b, "tp_after": a,
                     "drop": None if b is None or a is None else b - a})
    return rows


def run_semantics(cfg, scopes, sink):
    """Task 1, then each of two second tasks (``classes2`` and ``alt_classes2``) from the same start."""
    rng = library_rng(scopes)
    base = load_base(cfg, scopes)
    b = baseline(cfg, split_pair(cfg, base), rng)
    res = base_result(b, sink)
    t1 = b.pair.task1.test
    before = tp(b.m1, t1, "t1")
    rows = _semantic_rows("task2", before, tp(b.m2, t1, "t1"))
    if cfg.task.alt_classes2:
        alt = split_pair(cfg, base, cfg.task.alt_classes2)
        m = b.m1.clone()
        curves = P.train_second_task(m, alt, b.opt, cfg.train.epochs_task2, rng)
        res.curves["alt/task1"] = curves["task1"]
        rows += _semantic_rows("alt_task2", before, tp(m, t1, "t1"))
    res.tables["semantics"] = rows
    return res


def _with_other(cfg, base: DataSplits) -> tuple[TaskPair, TaskPair]:
    """(plain pair, pair whose task 1 has an extra ``other`` class), standardized alike."""
    plain = make_split_task(base, cfg.task.classes1, cfg.task.classes2)
    if not cfg.task.other_pool:
        raise ConfigError("task.other_pool is empty")
    pool = select_classes(base.train, [base.train.class_index(c) for c in cfg.task.other_pool])
    t1 = DataSplits(add_other_category(plain.task1.train, pool), plain.task1.test)
    other = TaskPair(t1, plain.task2, plain.head_mode, plain.description + " + other")
    return prepare(cfg, plain), prepare(cfg, other)


def run_other_category(cfg, scopes, sink):
    rng = library_rng(scopes)
    plain, other = _with_other(cfg, load_base(cfg, scopes))
    b = baseline(cfg, plain, rng)
    res = base_result(b, sink)
    rows = [{"variant": "plain", "acc_before": b.c1["task1"][-1], "acc_after": b.c2["task1"][-1]}]
    bo = baseline(cfg, other, rng)
    rows.append({"variant": "other", "acc_before": bo.c1["task1"][-1], "acc_after": bo.c2["task1"][-1]})
    for r in rows:
        r["forgetting"] = r["acc_before"] - r["acc_after"]
    res.curves["other/task2/task1"] = bo.c2["task1"]
    res.tables["other_category"] = rows
    return res


def run_mixup(cfg, scopes, sink):
    """Single head over task 1 (+ other); task 2 is lam * new task + (1 - lam) * task 1,
    re-paired every epoch."""
    rng = library_rng(scopes)
    plain, other = _with_other(cfg, load_base(cfg, scopes))
    arch = arch_spec(cfg, other.task1.train.input_shape)
    opt = opt_config(cfg)
    m1, c1 = P.run_task1(other, arch, opt, cfg.train.epochs_task1, rng)
    res = SeedResult(curves={"task1/task1": c1["task1"]})
    save(m1, "post-task-1", sink, res)
    pairing = scopes.take("pairing")
    d1 = other.task1.train.subset(np.flatnonzero(other.task1.train.labels < len(cfg.task.classes1)))
    rows = []
    for i, lam in enumerate(cfg.mixup.lambdas):
        arm = pairing.derive(f"lambda-{i}")

        def mixed(epoch, lam=lam, arm=arm):
            d = mixup_interpolate(d1, other.task2.train, lam, arm.derive(f"epoch-{epoch}"))
            return np.asarray(d.inputs), d.labels

        x0, y0 = mixed(0)
        data = DataSplits(Dataset(x0, y0, d1.class_names, "train"), other.task2.test)
        m = m1.clone()
        curves = train_task(m, "t1", data, opt, cfg.train.epochs_task2, rng.derive("shuffle").derive(f"mixup-{i}"),
                            rng.derive("init"), evals={"task1": (other.task1.test, "t1")}, epoch_data=mixed)
        rows.append({"lambda": lam, "acc_before": c1["task1"][-1], "acc_after": curves["task1"][-1],
                     "forgetting": c1["task1"][-1] - curves["task1"][-1]})
        res.curves[f"mixup{lam}/task1"] = curves["task1"]
    res.tables["mixup"] = rows
    return res


def run_superclass(cfg, scopes, sink):
    rng = library_rng(scopes)
    base = load_base(cfg, scopes, hierarchy="cifar100")
    pair = prepare(cfg, make_superclass_shift_task(base, cfg.task.superclasses, cfg.task.subclasses1, cfg.task.subclasses2))
    b = baseline(cfg, pair, rng)
    res = base_result(b, sink)
    t1 = pair.task1.test
    res.tables["superclass"] = _semantic_rows("task2", tp(b.m1, t1, "t1"), tp(b.m2, t1, "t1"))
    return res


def _features(cfg, scopes):
    rng = library_rng(scopes)
    pair = split_pair(cfg, load_base(cfg, scopes))
    arch = arch_spec(cfg, pair.task1.train.input_shape)
    m1, c1 = P.run_task1(pair, arch, opt_config(cfg), cfg.train.epochs_task1, rng)
    snap = snapshot(m1, "post-task-1")
    tap = cfg.analytic.tap or None
    n = cfg.analytic.n_points
    g1_train = A.extract_features(m1, snap, pair.task1.train, tap, "t1")
    g1 = A.extract_features(m1, snap, P.probe_set(pair.task1.test, n), tap, "t1")
    g2 = A.extract_features(m1, snap, P.probe_set(pair.task2.train, n), tap, "t1")
    y1 = pair.task1.test.labels[:n]
    y2 = pair.task2.train.labels[:n]
    return pair, m1, c1, g1_train, g1, y1, g2, y2


def _head(cfg, g1_train, pair) -> A.FrozenFeatureModel:
    return A.frozen_head_init(g1_train, pair.task1.train.labels, pair.task1.train.n_classes, cfg.analytic.lr, cfg.analytic.head_steps)


def _traj_rows(traj: A.Trajectory, **extra) -> list[dict]:
    return [{**extra, **r} for r in traj.rows()]


def run_frozen_analytic(cfg, scopes, sink):
    a = cfg.analytic
    pair, m1, c1, g1_train, g1, y1, g2, y2 = _features(cfg, scopes)
    res = SeedResult(curves={"task1/task1": c1["task1"]})
    head = _head(cfg, g1_train, pair)
    theta0 = head.theta.copy()
    traj = A.head_sgd_simulate(head, g2, y2, a.steps, g1, y1, slack=a.slack)
    same = A.FrozenFeatureModel(theta0.copy(), a.lr)
    g1_tr = A.FeatureMatrix(g1_train.values[: a.n_points], g1_train.fingerprint)
    traj_same = A.head_sgd_simulate(same, g1_tr, pair.task1.train.labels[: a.n_points], a.steps, g1, y1, slack=a.slack)
    k = theta0.shape[1]
    r = Rng(0)  # fixed second-head init; the head-only phase makes it task-specific
    multi = A.FrozenFeatureModel(theta0.T.copy(), a.lr, heads={"t1": np.eye(k), "t2": r.normal(size=(k, k)) / np.sqrt(k)})
    traj_multi = A.multihead_simulate(multi, g2, y2, g1, y1, a.head_steps, a.steps, slack=a.slack)
    res.curves["analytic/task1"] = traj.task1_acc
    res.curves["analytic_same/task1"] = traj_same.task1_acc
    res.curves["analytic_multi/task1"] = traj_multi.task1_acc
    res.tables["trajectory"] = _traj_rows(traj, run="task2") + _traj_rows(traj_same, run="identical") + _traj_rows(traj_multi, run="multihead")
    res.tables["lemma"] = [
        {"run": name, "max_kernel_error": t.max_kernel_error, "violations": t.total_violations,
         "task1_acc_start": t.task1_acc[0], "task1_acc_end": t.task1_acc[-1]}
        for name, t in (("task2", traj), ("identical", traj_same), ("multihead", traj_multi))
    ]
    return res


def run_rotation(cfg, scopes, sink):
    a = cfg.analytic
    pair, m1, c1, g1_train, g1, y1, g2, y2 = _features(cfg, scopes)
    res = SeedResult(curves={"task1/task1": c1["task1"]})
    head0 = _head(cfg, g1_train, pair)
    rows = []
    for theta in a.thetas:
        g2r = A.rotate_features(g2, theta, g1)
        overlap = float(np.linalg.norm(A.overlap_kernel(g1, g2r).values))
        model = A.FrozenFeatureModel(head0.theta.copy(), a.lr)
        traj = A.head_sgd_simulate(model, g2r, y2, a.steps, g1, y1, slack=a.slack)
        drift = A.weight_drift_report(traj)
        rows.append({"theta": theta, "overlap": overlap, "acc_before": traj.task1_acc[0], "acc_after": traj.task1_acc[-1],
                     "forgetting": traj.task1_acc[0] - traj.task1_acc[-1], "weight_distance": drift["distance"][-1],
                     "logit_change": float(np.max(np.abs(traj.task1_logits[-1] - traj.task1_logits[0]))),
                     "violations": traj.total_violations, "max_kernel_error": traj.max_kernel_error})
        res.curves[f"theta{theta}/task1"] = traj.task1_acc
    res.tables["rotation"] = rows
    return res


def run_width(cfg, scopes, sink):
    rng = library_rng(scopes)
    pair = split_pair(cfg, load_base(cfg, scopes))
    res = SeedResult()
    rows = []
    for mult in cfg.width.multipliers:
        b = baseline(cfg, pair, rng, multiplier=mult)
        before, after = b.c1["task1"][-1], b.c2["task1"][-1]
        rows.append({"multiplier": mult, "acc_before": before, "acc_after": after,
                     "percent_drop": P.percent_drop(before, after), "task2_final": b.c2["task2"][-1]})
        res.curves[f"width{mult}/task1"] = b.c2["task1"]
        if mult == cfg.width.multipliers[0]:
            res.report = base_report(b)
            res.cka = dict(b.cka)
    res.tables["width"] = rows
    return res


def run_headfirst(cfg, scopes, sink):
    rng = library_rng(scopes)
    b = baseline(cfg, split_pair(cfg, load_base(cfg, scopes)), rng)
    res = base_result(b, sink)
    h2 = P.task2_head(b.pair)
    evals = {"task1": (b.pair.task1.test, "t1"), "task2": (b.pair.task2.test, h2)}
    rows = []
    for e in cfg.headfirst.epochs:
        m = b.m1.clone()
        curves = M.headfirst_train(m, h2, b.pair.task2, e, b.opt, cfg.train.epochs_task2,
                                   rng.derive("shuffle").derive("task2"), rng.derive("init"), evals)
        rows.append({"epochs_head_only": e, "task1_final": curves["task1"][-1], "task2_final": curves["task2"][-1]})
        res.curves[f"headfirst{e}/task1"] = curves["task1"]
    res.tables["headfirst"] = rows
    return res


def run_task_specific(cfg, scopes, sink):
    rng = library_rng(scopes)
    b = baseline(cfg, split_pair(cfg, load_base(cfg, scopes)), rng)
    res = base_result(b, sink)
    before = b.c1["task1"][-1]
    shared_after = b.c2["task1"][-1]
    rows = []
    for n in cfg.task_specific.stages:
        m = M.make_task_specific(b.m1, n)
        curves = P.train_second_task(m, b.pair, b.opt, cfg.train.epochs_task2, rng)
        after = curves["task1"][-1]
        gap = before - shared_after
        rows.append({"stages": n, "task1_final": after, "task2_final": curves["task2"][-1],
                     "recovered_fraction": (after - shared_after) / gap if gap > 0 else None, "n_params": m.n_params()})
        res.curves[f"task_specific{n}/task1"] = curves["task1"]
    res.tables["task_specific"] = rows
    return res


def run_reset_retrain(cfg, scopes, sink):
    rng = library_rng(scopes)
    b = baseline(cfg, split_pair(cfg, load_base(cfg, scopes)), rng)
    res = base_result(b, sink)
    res.tables["reset_retrain"] = [
        {"n_frozen": n, "task1_accuracy": P.reset_and_retrain(b.m2, b.post1, n, b.pair.task1, b.opt, cfg.probe.retrain_epochs, rng)}
        for n in cfg.probe.retrain_frozen
    ]
    return res


def run_linear_probe(cfg, scopes, sink):
    rng = library_rng(scopes)
    b = baseline(cfg, split_pair(cfg, load_base(cfg, scopes)), rng)
    res = base_result(b, sink)
    train, test = b.pair.task1.train, b.pair.task1.test
    random_model = build_model(b.arch, scopes.take("probe-init"))
    rows = []
    for name, model in (("pre", b.m1), ("post", b.m2), ("random_lift", random_model)):
        out = P.linear_probe(P.record_stage_activations(model, train, head="t1"), train.labels,
                             P.record_stage_activations(model, test, head="t1"), test.labels, l2=cfg.probe.l2)
        row = {"model": name, "probe_accuracy": out.accuracy, "head_accuracy": accuracy(model, test, "t1") if name != "random_lift" else None}
        row.update({f"mass_{s}": v for s, v in out.stage_weight_mass.items()})
        rows.append(row)
    res.tables["linear_probe"] = rows
    return res


EXPERIMENTS = {
    "anatomy": run_anatomy,
    "mitigation": run_mitigation,
    "semantics-setup1": run_semantics,
    "semantics-setup2": run_semantics,
    "other-category": run_other_category,
    "mixup-sweep": run_mixup,
    "superclass-shift": run_superclass,
    "frozen-analytic": run_frozen_analytic,
    "rotation-sweep": run_rotation,
    "width-sweep": run_width,
    "headfirst": run_headfirst,
    "task-specific": run_task_specific,
    "reset-retrain": run_reset_retrain,
    "linear-probe": run_linear_probe,
}
