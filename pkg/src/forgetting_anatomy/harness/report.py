"""CSV summaries and SVG plots from run records.

Outputs (all under one directory):

* ``summary.csv``            one row per seed: status, accuracies, percent drops
* ``<table>.csv``            every per-seed table stacked, with a ``seed`` column
* ``<table>_aggregate.csv``  per key (first column) mean/min/max of each numeric column over seeds
* ``accuracy_<task>_seed<s>.svg``  accuracy curves evaluated on one task
* ``cka_by_stage.svg``       one dot per seed per stage
* ``freeze_sweep.svg``, ``reset_sweep.svg``, ``lambda_forgetting.svg``, ``mixup_forgetting.svg``
  and one sweep plot per other table with a numeric key, when present
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import StateError  # noqa: E402
from .run import OutputDir  # noqa: E402

PLOT_KINDS = ("curves", "cka", "sweeps")


def _csv_text(rows: list[dict]) -> str:
    header: list[str] = []
    for r in rows:
        header += [k for k in r if k not in header]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r.get(k) is None else r.get(k) for k in header})
    return buf.getvalue()


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    return buf.getvalue()


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


# Grouping columns per table; records store rows with sorted keys, so the
# key columns are named here and moved to the front of every CSV.
TABLE_KEYS = {
    "cka": ("stage",),
    "freeze": ("k",),
    "reset": ("n",),
    "ewc": ("lambda",),
    "replay": ("fraction",),
    "mixup": ("lambda",),
    "width": ("multiplier",),
    "rotation": ("theta",),
    "headfirst": ("epochs_head_only",),
    "task_specific": ("stages",),
    "reset_retrain": ("n_frozen",),
    "linear_probe": ("model",),
    "semantics": ("variant", "class"),
    "superclass": ("variant", "class"),
    "other_category": ("variant",),
    "trajectory": ("run", "step"),
    "lemma": ("run",),
    "baseline": ("arm",),
}


def table_keys(table: str, rows: list[dict]) -> tuple[str, ...]:
    keys = TABLE_KEYS.get(table)
    if keys and all(k in rows[0] for k in keys):
        return keys
    return (next(k for k in rows[0] if k != "seed"),)


def stacked(records: list[dict], table: str) -> list[dict]:
    rows = []
    for rec in records:
        for row in rec.get("tables", {}).get(table, []):
            rows.append({"seed": rec["seed"], **row})
    if not rows:
        return rows
    front = ("seed",) + table_keys(table, rows)
    return [{**{k: r.get(k) for k in front}, **{k: v for k, v in r.items() if k not in front}} for r in rows]


def aggregate(rows: list[dict], key) -> list[dict]:
    """Group ``rows`` by ``key`` (a column or tuple of columns); mean/min/max of each
    numeric column over the group, groups in first-seen order."""
    keys = (key,) if isinstance(key, str) else tuple(key)
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for k, members in groups.items():
        row = {**dict(zip(keys, k)), "n": len(members)}
        cols = [c for c in members[0] if c not in keys and c != "seed"]
        for c in cols:
            vals = [m.get(c) for m in members if _is_num(m.get(c))]
            if not vals:
                continue
            row[f"{c}_mean"] = float(np.mean(vals))
            row[f"{c}_min"] = float(np.min(vals))
            row[f"{c}_max"] = float(np.max(vals))
        out.append(row)
    return out


def summary_rows(records: list[dict]) -> list[dict]:
    rows = []
    for rec in records:
        row = {"seed": rec["seed"], "kind": rec["kind"], "status": rec["status"], "config_hash": rec["config_hash"]}
        rep = rec.get("report") or {}
        for field in ("acc_before", "acc_after", "percent_drop"):
            for task, v in (rep.get(field) or {}).items():
                row[f"{field}_{task}"] = v
        final = (rec.get("curves") or {}).get("task2/task2")
        if final:
            row["task2_final"] = final[-1]
        if rec.get("error"):
            row["error"] = rec["error"]
        rows.append(row)
    return rows


# -- plots -------------------------------------------------------------------

def curve_figures(rec: dict) -> dict[str, bytes]:
    """One accuracy-curve SVG per evaluated task. Curves hold the pre-training value
    followed by one value per epoch; task-1 phase curves start at epoch 0 and every
    other curve starts where the task-1 phase ends."""
    curves = rec.get("curves") or {}
    offset = max(len(curves.get("task1/task1", [])) - 1, 0)
    by_task: dict[str, list[tuple[str, list]]] = {}
    for name, ys in curves.items():
        phase, _, task = name.rpartition("/")
        by_task.setdefault(task, []).append((phase, ys))
    out = {}
    for task, lines in by_task.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for phase, ys in lines:
            start = 0 if phase == "task1" else offset
            ax.plot(np.arange(start, start + len(ys)), [np.nan if y is None else y for y in ys], label=phase)
        if offset:
            ax.axvline(offset, color="grey", lw=0.8, ls=":")
        ax.set_xlabel("epoch")
        ax.set_ylabel(f"{task} accuracy")
        ax.set_title(f"seed {rec['seed']}: accuracy on {task}")
        ax.legend(fontsize=7)
        out[f"accuracy_{task}_seed{rec['seed']}.svg"] = _svg(fig)
    return out


def cka_figure(records: list[dict]) -> bytes | None:
    stages: list[str] = []
    for rec in records:
        stages += [s for s in (rec.get("cka") or {}) if s not in stages]
    if not stages:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for rec in records:
        cka = rec.get("cka") or {}
        xs = [i for i, s in enumerate(stages) if s in cka]
        ax.scatter(xs, [cka[stages[i]] for i in xs], label=f"seed {rec['seed']}", s=20)
    ax.set_xticks(range(len(stages)), stages)
    ax.set_ylim(-0.02, 1.02)
    ax.set_ylabel("CKA before vs after task 2")
    ax.legend(fontsize=7)
    return _svg(fig)


def sweep_figure(rows: list[dict], key: str, ycols: list[str], ylabel: str, logx: bool = False) -> bytes:
    """Mean over seeds with a min-max band for each column in ``ycols``."""
    agg = aggregate(rows, key)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.array([r[key] for r in agg], dtype=float)
    for c in ycols:
        if f"{c}_mean" not in agg[0]:
            continue
        mean = np.array([r.get(f"{c}_mean", np.nan) for r in agg])
        lo = np.array([r.get(f"{c}_min", np.nan) for r in agg])
        hi = np.array([r.get(f"{c}_max", np.nan) for r in agg])
        ax.plot(xs, mean, marker="o", label=c)
        ax.fill_between(xs, lo, hi, alpha=0.2)
    if logx:
        ax.set_xscale("symlog", linthresh=1.0)
    ax.set_xlabel(key)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    return _svg(fig)


SWEEPS = {
    "freeze": ("freeze_sweep.svg", "k", ["task2_final", "task1_final"], "accuracy"),
    "reset": ("reset_sweep.svg", "n", ["from_top", "from_bottom"], "task-1 accuracy after reset"),
    "ewc": ("lambda_forgetting.svg", "lambda", ["task1_final", "task2_final"], "accuracy"),
    "mixup": ("mixup_forgetting.svg", "lambda", ["forgetting"], "task-1 forgetting"),
    "replay": ("replay_sweep.svg", "fraction", ["task1_final", "task2_final"], "accuracy"),
    "width": ("width_sweep.svg", "multiplier", ["percent_drop"], "task-1 percent drop"),
    "rotation": ("rotation_sweep.svg", "theta", ["forgetting", "overlap"], "value"),
    "headfirst": ("headfirst_sweep.svg", "epochs_head_only", ["task1_final", "task2_final"], "accuracy"),
    "task_specific": ("task_specific_sweep.svg", "stages", ["task1_final", "task2_final"], "accuracy"),
    "reset_retrain": ("reset_retrain_sweep.svg", "n_frozen", ["task1_accuracy"], "task-1 accuracy"),
}


# -- entry point ----------------------------------------------------------------

def report(records: list[dict], out_dir, plot_kinds=PLOT_KINDS) -> list[Path]:
    """Write CSVs and SVGs for ``records`` into ``out_dir``; returns the written paths."""
    if not records:
        raise StateError("report needs at least one record")
    unknown = set(plot_kinds) - set(PLOT_KINDS)
    if unknown:
        raise StateError(f"unknown plot kinds {sorted(unknown)}")
    out = OutputDir(out_dir)
    written = [out.write_text("summary.csv", _csv_text(summary_rows(records)))]
    ok = [r for r in records if r["status"] == "ok"]
    tables: list[str] = []
    for rec in ok:
        tables += [t for t in rec.get("tables", {}) if t not in tables]
    for t in tables:
        rows = stacked(ok, t)
        if not rows:
            continue
        written.append(out.write_text(f"{t}.csv", _csv_text(rows)))
        written.append(out.write_text(f"{t}_aggregate.csv", _csv_text(aggregate(rows, table_keys(t, rows)))))
    if "curves" in plot_kinds:
        for rec in ok:
            for name, data in curve_figures(rec).items():
                written.append(out.write_bytes(name, data))
    if "cka" in plot_kinds:
        data = cka_figure(ok)
        if data is not None:
            written.append(out.write_bytes("cka_by_stage.svg", data))
    if "sweeps" in plot_kinds:
        for t, (name, key, ycols, ylabel) in SWEEPS.items():
            rows = stacked(ok, t)
            if rows and key in rows[0]:
                written.append(out.write_bytes(name, sweep_figure(rows, key, ycols, ylabel, logx=(t == "ewc"))))
    return written


def latest(records: list[dict]) -> list[dict]:
    """Last record per (config hash, seed), in first-seen order; reruns append to the same file."""
    keep: dict = {}
    for rec in records:
        keep[(rec["config_hash"], rec["seed"])] = rec
    return list(keep.values())


def report_dir(run_dir, out_dir=None, plot_kinds=PLOT_KINDS) -> list[Path]:
    from .run import load_records

    run_dir = Path(run_dir)
    return report(latest(load_records(run_dir)), out_dir if out_dir is not None else run_dir / "report", plot_kinds)
