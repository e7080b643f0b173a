"""Readers for the CIFAR-10 / CIFAR-100 binary distributions.

CIFAR-10 records are 1 label byte + 3072 pixel bytes; CIFAR-100 records are
coarse label byte + fine label byte + 3072 pixel bytes. Pixels are stored as
three 32x32 planes (R, G, B).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .dataset import Dataset, DataSplits

DATA_ROOT_ENV = "FORGETTING_DATA_ROOT"
PIXELS = 3 * 32 * 32

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)

CIFAR100_COARSE = (
    "aquatic_mammals", "fish", "flowers", "food_containers", "fruit_and_vegetables",
    "household_electrical_devices", "household_furniture", "insects", "large_carnivores",
    "large_man-made_outdoor_things", "large_natural_outdoor_scenes",
    "large_omnivores_and_herbivores", "medium_mammals", "non-insect_invertebrates",
    "people", "reptiles", "small_mammals", "trees", "vehicles_1", "vehicles_2",
)

CIFAR100_HIERARCHY = {
    "aquatic_mammals": ("beaver", "dolphin", "otter", "seal", "whale"),
    "fish": ("aquarium_fish", "flatfish", "ray", "shark", "trout"),
    "flowers": ("orchid", "poppy", "rose", "sunflower", "tulip"),
    "food_containers": ("bottle", "bowl", "can", "cup", "plate"),
    "fruit_and_vegetables": ("apple", "mushroom", "orange", "pear", "sweet_pepper"),
    "household_electrical_devices": ("clock", "keyboard", "lamp", "telephone", "television"),
    "household_furniture": ("bed", "chair", "couch", "table", "wardrobe"),
    "insects": ("bee", "beetle", "butterfly", "caterpillar", "cockroach"),
    "large_carnivores": ("bear", "leopard", "lion", "tiger", "wolf"),
    "large_man-made_outdoor_things": ("bridge", "castle", "house", "road", "skyscraper"),
    "large_natural_outdoor_scenes": ("cloud", "forest", "mountain", "plain", "sea"),
    "large_omnivores_and_herbivores": ("camel", "cattle", "chimpanzee", "elephant", "kangaroo"),
    "medium_mammals": ("fox", "porcupine", "possum", "raccoon", "skunk"),
    "non-insect_invertebrates": ("crab", "lobster", "snail", "spider", "worm"),
    "people": ("baby", "boy", "girl", "man", "woman"),
    "reptiles": ("crocodile", "dinosaur", "lizard", "snake", "turtle"),
    "small_mammals": ("hamster", "mouse", "rabbit", "shrew", "squirrel"),
    "trees": ("maple_tree", "oak_tree", "palm_tree", "pine_tree", "willow_tree"),
    "vehicles_1": ("bicycle", "bus", "motorcycle", "pickup_truck", "train"),
    "vehicles_2": ("lawn_mower", "rocket", "streetcar", "tank", "tractor"),
}

CIFAR100_FINE = tuple(sorted(f for subs in CIFAR100_HIERARCHY.values() for f in subs))

CIFAR10_FILES = {"train": [f"data_batch_{i}.bin" for i in range(1, 6)], "test": ["test_batch.bin"]}
CIFAR100_FILES = {"train": ["train.bin"], "test": ["test.bin"]}


def data_root() -> Path | None:
    root = os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else None


def _records(buf: bytes, record: int, path) -> np.ndarray:
    if len(buf) % record:
        whole = len(buf) // record
        raise FormatError(
            f"{path}: {len(buf)} bytes is not a multiple of the {record}-byte record "
            f"(partial record at offset {whole * record})"
        )
    return np.frombuffer(buf, dtype=np.uint8).reshape(-1, record)


def channel_stats(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of an (N, C, H, W) array."""
    mean = pixels.mean(axis=(0, 2, 3))
    std = pixels.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def _standardize(pixels, stats):
    mean, std = stats
    return (pixels - np.asarray(mean)[None, :, None, None]) / np.asarray(std)[None, :, None, None]


def load_cifar10(path, split: str = "train", stats=None) -> Dataset:
    """Read one CIFAR-10 binary file.

    Pixels are scaled to [0, 1] and standardized per channel with ``stats``
    (mean, std); when ``stats`` is None they are computed from this file.
    """
    rec = _records(Path(path).read_bytes(), 1 + PIXELS, path)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise FormatError(f"{path}: label byte {labels.max()} out of range for CIFAR-10")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    stats = channel_stats(pixels) if stats is None else stats
    return Dataset(
        inputs=_standardize(pixels, stats),
        labels=labels,
        class_names=CIFAR10_CLASSES,
        split=split,
        meta={"source": str(path), "stats": [list(map(float, s)) for s in stats]},
    )


def load_cifar100(path, split: str = "train", stats=None) -> Dataset:
    """Read one CIFAR-100 binary file; labels are fine classes, coarse kept alongside."""
    rec = _records(Path(path).read_bytes(), 2 + PIXELS, path)
    coarse = rec[:, 0].astype(np.int64)
    fine = rec[:, 1].astype(np.int64)
    if fine.size and (fine.max() >= 100 or coarse.max() >= 20):
        raise FormatError(f"{path}: label bytes out of range for CIFAR-100")
    pixels = rec[:, 2:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    stats = channel_stats(pixels) if stats is None else stats
    return Dataset(
        inputs=_standardize(pixels, stats),
        labels=fine,
        class_names=CIFAR100_FINE,
        split=split,
        coarse_labels=coarse,
        coarse_names=CIFAR100_COARSE,
        meta={"source": str(path), "stats": [list(map(float, s)) for s in stats]},
    )


def _concat(parts: list[Dataset]) -> Dataset:
    first = parts[0]
    coarse = None
    if first.coarse_labels is not None:
        coarse = np.concatenate([p.coarse_labels for p in parts])
    return Dataset(
        inputs=np.concatenate([p.inputs for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        class_names=first.class_names,
        split=first.split,
        coarse_labels=coarse,
        coarse_names=first.coarse_names,
        meta=dict(first.meta),
    )


def _load_splits(directory, files, loader) -> DataSplits:
    directory = Path(directory)
    raw = []
    for name in files["train"]:
        rec = loader(directory / name, "train", stats=(np.zeros(3), np.ones(3)))
        raw.append(rec)
    train = _concat(raw)
    stats = channel_stats(np.asarray(train.inputs))
    train = train.subset(np.arange(len(train)), inputs=_standardize(np.asarray(train.inputs), stats))
    test = _concat([loader(directory / n, "test", stats=stats) for n in files["test"]])
    return DataSplits(train=train, test=test)


def load_cifar10_splits(directory) -> DataSplits:
    """Train batches 1-5 and the test batch; standardization from the train split."""
    return _load_splits(directory, CIFAR10_FILES, load_cifar10)


def load_cifar100_splits(directory) -> DataSplits:
    return _load_splits(directory, CIFAR100_FILES, load_cifar100)


def fetch_info() -> str:
    """Human-readable description of where datasets are looked up."""
    root = data_root()
    lines = [
        f"Dataset root: ${DATA_ROOT_ENV} = {root if root else '(unset)'}",
        "Expected layout (binary versions from https://www.cs.toronto.edu/~kriz/cifar.html):",
        "  <root>/cifar-10-batches-bin/data_batch_{1..5}.bin, test_batch.bin  (3073-byte records)",
        "  <root>/cifar-100-binary/train.bin, test.bin                        (3074-byte records)",
    ]
    if root:
        for sub, files in (("cifar-10-batches-bin", CIFAR10_FILES), ("cifar-100-binary", CIFAR100_FILES)):
            names = files["train"] + files["test"]
            present = [n for n in names if (root / sub / n).exists()]
            lines.append(f"  {sub}: {len(present)}/{len(names)} files present")
    lines.append("Without these files, experiments use the synthetic generators (task.source = synthetic).")
    return "\n".join(lines)
