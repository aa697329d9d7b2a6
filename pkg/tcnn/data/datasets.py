# tcnn/data/datasets.py
"""
Image classification datasets: a seeded synthetic shapes generator and the
CIFAR-10 binary format.
"""
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from tcnn.core.exceptions import ConfigError, DataError
from tcnn.utils.logging import logger

SHAPES = ("disk", "square", "triangle", "cross", "ring")
COLOURS = {
    "red": (0.9, 0.15, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.3, 0.95),
    "yellow": (0.95, 0.85, 0.1),
}
CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)
# test images of the synthetic set are drawn from a disjoint index range
TEST_INDEX_OFFSET = 1 << 30


@dataclass
class Dataset:
    """
    Images (N x C x H x W, float) and integer labels.

    `mean` and `std` are the per-channel constants applied by `normalize`,
    None while the images are still in [0, 1].
    """
    name: str
    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def resolution(self) -> int:
        return self.images.shape[-1]


def _shape_mask(kind: str, res: int, cy: float, cx: float, radius: float) -> np.ndarray:
    y, x = np.mgrid[0:res, 0:res].astype(np.float64) + 0.5
    dy, dx = y - cy, x - cx
    if kind == "disk":
        return dy ** 2 + dx ** 2 <= radius ** 2
    if kind == "square":
        return (np.abs(dy) <= 0.8 * radius) & (np.abs(dx) <= 0.8 * radius)
    if kind == "triangle":
        # apex up, base at cy + radius
        return (dy <= 0.8 * radius) & (dy >= -radius) & (np.abs(dx) <= 0.5 * (dy + radius))
    if kind == "cross":
        arm = 0.3 * radius
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= radius))
    if kind == "ring":
        d2 = dy ** 2 + dx ** 2
        return (d2 <= radius ** 2) & (d2 >= (0.55 * radius) ** 2)
    raise ConfigError("Unknown shape", detail=kind)


def synthetic_image(index: int, res: int, n_classes: int, seed: int) -> Tuple[np.ndarray, int]:
    """
    One synthetic sample, a pure function of (seed, index).

    The label is index % n_classes; class c is shape c % 5 in colour c // 5.
    """
    rng = np.random.default_rng([seed, index])
    label = index % n_classes
    shape = SHAPES[label % len(SHAPES)]
    colour = np.asarray(list(COLOURS.values())[label // len(SHAPES)])
    image = rng.uniform(0.0, 0.45, size=(3, res, res))
    radius = res * rng.uniform(0.2, 0.32)
    cy = rng.uniform(radius, res - radius)
    cx = rng.uniform(radius, res - radius)
    mask = _shape_mask(shape, res, cy, cx, radius)
    tint = np.clip(colour + rng.normal(0.0, 0.05, size=3), 0.0, 1.0)
    image[:, mask] = tint[:, None] * rng.uniform(0.85, 1.0)
    return image, label


def gen_synthetic(n: int, res: int = 32, n_classes: int = 10, seed: int = 0, split: str = "train",
                  dtype=np.float32) -> Dataset:
    """
    Seeded dataset of coloured shapes on noise, values in [0, 1].

    Image i gets label i % n_classes, counting test images from
    TEST_INDEX_OFFSET. Classes are balanced only when n is a multiple of
    n_classes; otherwise the first n % n_classes labels of the cycle get one
    extra image.

    Raises:
        ConfigError: For non-positive sizes or more classes than shape x colour combinations
    """
    if n <= 0 or res < 8:
        raise ConfigError("Synthetic data needs n > 0 and resolution >= 8", detail=f"n={n} res={res}")
    if not 1 < n_classes <= len(SHAPES) * len(COLOURS):
        raise ConfigError("Synthetic data supports 2 to 20 classes", detail=str(n_classes))
    offset = TEST_INDEX_OFFSET if split == "test" else 0
    images = np.empty((n, 3, res, res), dtype=dtype)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        images[i], labels[i] = synthetic_image(offset + i, res, n_classes, seed)
    logger.debug(f"Generated {n} synthetic {split} images at {res}x{res}")
    return Dataset(name=f"synthetic-{split}", images=images, labels=labels, n_classes=n_classes,
                   meta={"seed": str(seed)})


def read_cifar10_file(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Parse one CIFAR-10 binary batch into uint8 images and labels."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise DataError("Malformed CIFAR-10 file", detail=f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise DataError("CIFAR-10 label out of range", detail=f"{path}: label {labels.max()}")
    return records[:, 1:].reshape((-1,) + CIFAR_SHAPE), labels


def load_cifar10(directory: str, split: str = "train", limit: Optional[int] = None,
                 dtype=np.float32) -> Dataset:
    """
    Load the CIFAR-10 binary distribution from `directory`, values scaled to [0, 1].

    Raises:
        DataError: If a file is missing or malformed
    """
    files = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for name in files:
        path = os.path.join(directory, name)
        if not os.path.isfile(path):
            raise DataError("CIFAR-10 file not found", detail=path)
        x, y = read_cifar10_file(path)
        images.append(x)
        labels.append(y)
    x = np.concatenate(images)
    y = np.concatenate(labels)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    logger.info(f"Loaded {len(y)} CIFAR-10 {split} records from {directory}")
    return Dataset(name=f"cifar10-{split}", images=(x.astype(dtype) / 255.0).astype(dtype), labels=y,
                   n_classes=10)


def resize(images: np.ndarray, res: int) -> np.ndarray:
    """Nearest-neighbour resize of N x C x H x W images to res x res."""
    H, W = images.shape[-2:]
    if (H, W) == (res, res):
        return images
    rows = np.minimum((np.arange(res) * H) // res, H - 1)
    cols = np.minimum((np.arange(res) * W) // res, W - 1)
    return np.ascontiguousarray(images[..., rows[:, None], cols[None, :]])


def channel_stats(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of raw [0, 1] images."""
    mean = dataset.images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = dataset.images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean, np.maximum(std, 1e-6)


def normalize(dataset: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    """Apply per-channel (x - mean) / std; the constants are stored on the dataset."""
    shape = (1, -1, 1, 1)
    images = ((dataset.images - mean.reshape(shape)) / std.reshape(shape)).astype(dataset.images.dtype)
    return replace(dataset, images=images, mean=np.asarray(mean), std=np.asarray(std))


def normalization_record(dataset: Dataset) -> Dict[str, str]:
    """Flat key=value record of the normalization constants for the run config."""
    if dataset.mean is None:
        return {}
    return {
        "RUN_NORM_MEAN": ",".join(repr(float(v)) for v in dataset.mean),
        "RUN_NORM_STD": ",".join(repr(float(v)) for v in dataset.std),
    }


def batches(dataset: Dataset, batch_size: int, rng: Optional[np.random.Generator] = None,
            hflip_rng: Optional[np.random.Generator] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """
    Mini-batches in shuffled order when `rng` is given, with random horizontal flips when `hflip_rng` is.
    """
    order = rng.permutation(len(dataset)) if rng is not None else np.arange(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        x = dataset.images[idx]
        if hflip_rng is not None:
            flip = hflip_rng.random(len(idx)) < 0.5
            if flip.any():
                x = x.copy()
                x[flip] = x[flip][..., ::-1]
        yield x, dataset.labels[idx]


def load_datasets(settings, resolution: Optional[int] = None) -> Tuple[Dataset, Dataset]:
    """
    Train and test splits named by the settings, normalized with train statistics.

    `resolution` overrides RESOLUTION (nearest-neighbour resize for CIFAR-10,
    native generation for synthetic data).
    """
    res = resolution or settings.RESOLUTION
    dtype = np.dtype(settings.numpy_dtype)
    if settings.DATASET == "synthetic":
        train = gen_synthetic(settings.TRAIN_SIZE, res, settings.N_CLASSES, settings.SEED, "train", dtype)
        test = gen_synthetic(settings.TEST_SIZE, res, settings.N_CLASSES, settings.SEED, "test", dtype)
    else:
        train = load_cifar10(settings.DATA_DIR, "train", settings.TRAIN_SIZE, dtype)
        test = load_cifar10(settings.DATA_DIR, "test", settings.TEST_SIZE, dtype)
        train = replace(train, images=resize(train.images, res))
        test = replace(test, images=resize(test.images, res))
    mean, std = channel_stats(train)
    return normalize(train, mean, std), normalize(test, mean, std)
