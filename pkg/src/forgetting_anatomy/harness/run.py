"""Run a config seed by seed and persist one JSON-lines record per seed.

Layout of an output directory::

    config.toml          resolved config, verbatim
    records.jsonl        one record per seed (appended)
    seed-<s>/            per-seed artifacts (parameter snapshots)
    report/              CSV summaries and SVG plots (see :mod:`.report`)

All files are written through a temp file and a rename. Nothing is written
outside the output directory.
"""

from __future__ import annotations

import json
import math
import time
import traceback
from pathlib import Path

import numpy as np

from ..data.cifar import DATA_ROOT_ENV, data_root
from ..errors import ConfigError, StateError
from ..nn.container import atomic_write_bytes
from .config import ExperimentConfig, config_hash, serialize, to_dict
from .experiments import EXPERIMENTS, SeedDir
from .seeding import seed_everything

RECORDS = "records.jsonl"
TIMING_FIELDS = ("wall_clock",)


class OutputDir:
    """Write access confined to one directory tree."""

    def __init__(self, root):
        self.root = Path(root).resolve()

    def resolve(self, rel: str) -> Path:
        path = (self.root / rel).resolve()
        if path != self.root and self.root not in path.parents:
            raise StateError(f"refusing to write {rel!r} outside {self.root}")
        return path

    def write_bytes(self, rel: str, data: bytes) -> Path:
        path = self.resolve(rel)
        atomic_write_bytes(path, data)
        return path

    def write_text(self, rel: str, text: str) -> Path:
        return self.write_bytes(rel, text.encode("utf-8"))

    def append_line(self, rel: str, line: str) -> Path:
        path = self.resolve(rel)
        old = path.read_bytes() if path.exists() else b""
        return self.write_bytes(rel, old + line.encode("utf-8") + b"\n")


def clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN and inf to null, keys to str."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(record: dict) -> str:
    return json.dumps(clean(record), sort_keys=True, allow_nan=False)


def run_seed(cfg: ExperimentConfig, seed: int, out: OutputDir) -> dict:
    start = time.perf_counter()
    record = {"config_hash": config_hash(cfg), "kind": cfg.kind, "seed": seed}
    try:
        scopes = seed_everything(seed)
        result = EXPERIMENTS[cfg.kind](cfg, scopes, SeedDir(out.root, f"seed-{seed}"))
        record.update(status="ok", error=None, curves=result.curves, report=result.report, cka=result.cka,
                      tables=result.tables, artifacts=result.artifacts, scopes=list(scopes.taken))
    except Exception as e:  # per-seed failures are recorded; other seeds proceed
        record.update(status="error", error=f"{type(e).__name__}: {e}", traceback=traceback.format_exc(limit=5),
                      curves={}, report=None, cka={}, tables={}, artifacts=[])
    record["wall_clock"] = time.perf_counter() - start
    return record


def run(cfg: ExperimentConfig, out_dir=None, log=None) -> list[dict]:
    """Run every seed of ``cfg``; returns the records (also appended to ``records.jsonl``)."""
    cfg.validate()
    if cfg.task.source == "cifar" and data_root() is None:
        raise ConfigError(f"task.source = cifar needs ${DATA_ROOT_ENV} to point at the dataset root")
    root = out_dir if out_dir is not None else cfg.output_dir
    if not str(root):
        raise ConfigError("output_dir is empty")
    out = OutputDir(root)
    out.write_text("config.toml", serialize(cfg))
    records = []
    for seed in cfg.seeds:
        rec = run_seed(cfg, seed, out)
        rec["config"] = to_dict(cfg)
        out.append_line(RECORDS, dumps(rec))
        records.append(json.loads(dumps(rec)))
        if log:
            log(f"seed {seed}: {rec['status']} ({rec['wall_clock']:.1f}s){'  ' + rec['error'] if rec['error'] else ''}")
    return records


def load_records(directory) -> list[dict]:
    path = Path(directory) / RECORDS
    if not path.exists():
        raise StateError(f"no {RECORDS} in {directory}")
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise StateError(f"{path} holds no records")
    return records


def numeric_view(record: dict) -> str:
    """The record without timing fields, as canonical JSON (for determinism checks)."""
    rec = {k: v for k, v in record.items() if k not in TIMING_FIELDS}
    return json.dumps(rec, sort_keys=True)
