from .builders import (
    DEFAULT_SPLIT,
    add_other_category,
    make_split_task,
    make_superclass_shift_task,
    mixup_interpolate,
    select_classes,
    standardize_pair,
)
from .cifar import (
    CIFAR10_CLASSES,
    CIFAR100_COARSE,
    CIFAR100_FINE,
    CIFAR100_HIERARCHY,
    fetch_info,
    load_cifar10,
    load_cifar10_splits,
    load_cifar100,
    load_cifar100_splits,
)
from .dataset import Dataset, DataSplits, TaskPair
from .synthetic import ClusterConfig, SynthConfig, synth_base, synth_cluster_task

__all__ = [
    "CIFAR10_CLASSES",
    "CIFAR100_COARSE",
    "CIFAR100_FINE",
    "CIFAR100_HIERARCHY",
    "ClusterConfig",
    "DEFAULT_SPLIT",
    "DataSplits",
    "Dataset",
    "SynthConfig",
    "TaskPair",
    "add_other_category",
    "fetch_info",
    "load_cifar10",
    "load_cifar10_splits",
    "load_cifar100",
    "load_cifar100_splits",
    "make_split_task",
    "make_superclass_shift_task",
    "mixup_interpolate",
    "select_classes",
    "standardize_pair",
    "synth_base",
    "synth_cluster_task",
]
