"""Command line entry point: ``forgetting <command> ...``.

    forgetting run CONFIG [--out DIR] [--seeds 0,1]
    forgetting report DIR [--out DIR]
    forgetting probe cka|freeze|reset|linear CONFIG [--seed S] [--out DIR]
    forgetting analytic simulate|rotate CONFIG [--seed S] [--out DIR]
    forgetting analytic lemma-check [--p 32] [--n 64] [--steps 100] [--lr 0.5] [--seed 0]
    forgetting data fetch-info

Probe and analytic commands print their table as CSV on stdout and, with
``--out``, also write it there. The dataset root is read from
``$FORGETTING_DATA_ROOT``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from .. import analytic as A
from .. import probes as P
from ..data.cifar import fetch_info
from ..errors import ForgettingError
from ..numeric import Rng
from . import config as C
from . import experiments as E
from .report import _csv_text, report_dir
from .run import OutputDir, run
from .seeding import seed_everything

log = logging.getLogger("forgetting")


def _seeds(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _load(path: str, seeds=None) -> C.ExperimentConfig:
    cfg = C.load(path)
    if seeds is not None:
        cfg = dataclasses.replace(cfg, seeds=seeds)
        cfg.validate()
    return cfg


def _emit(rows: list[dict], out: str | None, name: str) -> None:
    text = _csv_text(rows)
    sys.stdout.write(text)
    if out:
        OutputDir(out).write_text(f"{name}.csv", text)


# -- subcommands ---------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load(args.config, args.seeds)
    out = args.out or cfg.output_dir
    records = run(cfg, out, log=log.info)
    failed = [r["seed"] for r in records if r["status"] != "ok"]
    log.info("%d records in %s", len(records), Path(out) / "records.jsonl")
    if not args.no_report:
        report_dir(out)
    return 1 if failed else 0


def cmd_report(args) -> int:
    paths = report_dir(args.dir, args.out)
    for p in paths:
        print(p)
    return 0


def _probe_baseline(cfg, seed):
    scopes = seed_everything(seed)
    rng = E.library_rng(scopes)
    return E.baseline(cfg, E.split_pair(cfg, E.load_base(cfg, scopes)), rng), scopes


def cmd_probe(args) -> int:
    cfg = _load(args.config)
    if args.what == "cka":
        b, _ = _probe_baseline(cfg, args.seed)
        rows = [{"stage": s, "cka": v} for s, v in b.cka.items()]
    elif args.what == "freeze":
        b, _ = _probe_baseline(cfg, args.seed)
        arms = P.freeze_sweep(b.pair, b.arch, cfg.probe.freeze_k, b.opt, cfg.train.epochs_task2, b.rng, post_task1=b.m1)
        rows = [{"k": k, "task2_final": a.task2_final, "task1_final": a.task1_final} for k, a in arms.items()]
    elif args.what == "reset":
        b, _ = _probe_baseline(cfg, args.seed)
        top = P.reset_sweep(b.m2, b.post1, "from_top", cfg.probe.reset_n, b.pair.task1.test)
        bottom = P.reset_sweep(b.m2, b.post1, "from_bottom", cfg.probe.reset_n, b.pair.task1.test)
        rows = [{"n": n, "from_top": top[n], "from_bottom": bottom[n]} for n in cfg.probe.reset_n]
    else:
        with tempfile.TemporaryDirectory() as tmp:
            res = E.run_linear_probe(cfg, seed_everything(args.seed), E.SeedDir(Path(tmp), "probe"))
        rows = res.tables["linear_probe"]
    _emit(rows, args.out, f"probe_{args.what}")
    return 0


def cmd_analytic(args) -> int:
    if args.what == "lemma-check":
        return lemma_check(args)
    cfg = _load(args.config)
    runner = E.run_frozen_analytic if args.what == "simulate" else E.run_rotation
    res = runner(cfg, seed_everything(args.seed), None)
    name = "lemma" if args.what == "simulate" else "rotation"
    _emit(res.tables[name], args.out, f"analytic_{name}")
    if args.out and args.what == "simulate":
        OutputDir(args.out).write_text("analytic_trajectory.csv", _csv_text(res.tables["trajectory"]))
    return 0


def lemma_check(args) -> int:
    """Random frozen features, full-batch head SGD; checks the per-step bound and kernel prediction."""
    r = Rng(args.seed)
    g1 = r.normal(size=(args.n, args.p)) / np.sqrt(args.p)
    g2 = r.normal(size=(args.n, args.p)) / np.sqrt(args.p)
    y1 = r.integers(0, args.classes, size=args.n)
    y2 = r.integers(0, args.classes, size=args.n)
    model = A.FrozenFeatureModel(np.zeros((args.p, args.classes)), args.lr)
    traj = A.head_sgd_simulate(model, g2, y2, args.steps, g1, y1, slack=args.slack)
    print(f"steps={args.steps} max_kernel_error={traj.max_kernel_error:.3e} violations={traj.total_violations}")
    return 0 if traj.total_violations == 0 and traj.max_kernel_error <= 1e-10 else 1


def cmd_data(args) -> int:
    print(fetch_info())
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="forgetting", description="Anatomy of catastrophic forgetting experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every seed of a config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seeds", type=_seeds, help="comma-separated seeds (overrides seeds)")
    p.add_argument("--no-report", action="store_true", help="skip CSV/SVG generation")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="CSV and SVG from a run directory")
    p.add_argument("dir")
    p.add_argument("--out", help="report directory (default DIR/report)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("probe", help="one probe on a freshly trained task pair")
    p.add_argument("what", choices=("cka", "freeze", "reset", "linear"))
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("analytic", help="frozen-feature model")
    p.add_argument("what", choices=("simulate", "rotate", "lemma-check"))
    p.add_argument("config", nargs="?")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--slack", type=float, default=1e-9)
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("data", help="dataset information")
    p.add_argument("what", choices=("fetch-info",))
    p.set_defaults(func=cmd_data)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    if args.command == "analytic" and args.what != "lemma-check" and not args.config:
        build_parser().error(f"analytic {args.what} needs a config")
    try:
        return args.func(args)
    except ForgettingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
