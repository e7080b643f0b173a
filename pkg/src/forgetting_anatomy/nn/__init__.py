from .container import load_snapshot, save_snapshot
from .layers import Conv2d, Dense, MaxPool2, ReLU, cross_entropy, softmax
from .model import (
    ArchSpec,
    Model,
    OptimizerConfig,
    ParamSnapshot,
    build_model,
    freeze_bottom,
    restore,
    set_trainability,
    snapshot,
    train_step,
)
from .train import train_epochs

__all__ = [
    "ArchSpec",
    "Conv2d",
    "Dense",
    "MaxPool2",
    "Model",
    "OptimizerConfig",
    "ParamSnapshot",
    "ReLU",
    "build_model",
    "cross_entropy",
    "freeze_bottom",
    "load_snapshot",
    "restore",
    "save_snapshot",
    "set_trainability",
    "snapshot",
    "softmax",
    "train_epochs",
    "train_step",
]
