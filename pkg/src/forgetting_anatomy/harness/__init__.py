"""Config parsing, seeded runs, persistence and reports.

The ``run`` and ``report`` entry points live in the submodules of the same name.
"""

from .config import ExperimentConfig, config_hash, load, parse, serialize
from .report import report_dir
from .run import load_records
from .seeding import RngScopes, seed_everything

__all__ = [
    "ExperimentConfig",
    "RngScopes",
    "config_hash",
    "load",
    "load_records",
    "parse",
    "report_dir",
    "seed_everything",
    "serialize",
]
