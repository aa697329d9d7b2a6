# tests/test_datasets.py
"""
Tests for the synthetic generator, the CIFAR-10 reader and normalization.
"""
import sys
import os
import numpy as np
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.core.config import load_settings
from tcnn.core.exceptions import ConfigError, DataError
from tcnn.data.datasets import (CIFAR_RECORD, TEST_INDEX_OFFSET, batches, channel_stats, gen_synthetic,
                                load_cifar10, load_datasets, normalization_record, normalize, read_cifar10_file,
                                resize, synthetic_image)


def write_cifar_file(path, labels):
    """Write records whose pixel bytes are (label + position) % 256"""
    records = np.zeros((len(labels), CIFAR_RECORD), dtype=np.uint8)
    for i, label in enumerate(labels):
        records[i, 0] = label
        records[i, 1:] = (label + np.arange(CIFAR_RECORD - 1)) % 256
    records.tofile(str(path))


def test_synthetic_deterministic():
    """The same seed and index give the same image"""
    a, la = synthetic_image(7, 16, 10, seed=3)
    b, lb = synthetic_image(7, 16, 10, seed=3)
    c, _ = synthetic_image(7, 16, 10, seed=4)
    np.testing.assert_array_equal(a, b)
    assert la == lb == 7
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_synthetic_balanced_labels():
    """Labels cycle through the classes"""
    data = gen_synthetic(40, 8, 4, seed=0)
    assert data.images.shape == (40, 3, 8, 8)
    assert data.images.dtype == np.float32
    assert np.bincount(data.labels).tolist() == [10, 10, 10, 10]


def test_synthetic_label_cycle_remainder():
    """With n not a multiple of the class count, the first n % n_classes labels get one extra image"""
    data = gen_synthetic(10, 8, 4, seed=0)
    assert data.labels.tolist() == [i % 4 for i in range(10)]
    assert np.bincount(data.labels).tolist() == [3, 3, 2, 2]
    test = gen_synthetic(4, 8, 3, seed=0, split="test")
    assert test.labels.tolist() == [(TEST_INDEX_OFFSET + i) % 3 for i in range(4)]


def test_synthetic_splits_differ():
    """Train and test images come from disjoint index ranges"""
    train = gen_synthetic(4, 8, 2, seed=0, split="train")
    test = gen_synthetic(4, 8, 2, seed=0, split="test")
    assert not np.array_equal(train.images, test.images)
    assert train.labels.tolist() == test.labels.tolist()


@pytest.mark.parametrize("n,res,classes", [(0, 8, 10), (4, 4, 10), (4, 8, 1), (4, 8, 21)])
def test_synthetic_rejects_bad_sizes(n, res, classes):
    """Sizes, resolutions and class counts are validated"""
    with pytest.raises(ConfigError):
        gen_synthetic(n, res, classes)


def test_read_cifar_records(tmp_path):
    """Two records parse into labels and channel-major images"""
    path = tmp_path / "batch.bin"
    write_cifar_file(path, [3, 9])
    images, labels = read_cifar10_file(str(path))
    assert labels.tolist() == [3, 9]
    assert images.shape == (2, 3, 32, 32)
    assert images[0, 0, 0, 0] == 3
    assert images[1, 1, 0, 0] == (9 + 1024) % 256


def test_read_cifar_malformed(tmp_path):
    """Truncated files, empty files and bad labels are data errors"""
    path = tmp_path / "short.bin"
    np.zeros(CIFAR_RECORD + 5, dtype=np.uint8).tofile(str(path))
    with pytest.raises(DataError):
        read_cifar10_file(str(path))
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    with pytest.raises(DataError):
        read_cifar10_file(str(empty))
    bad = tmp_path / "bad.bin"
    write_cifar_file(bad, [12])
    with pytest.raises(DataError):
        read_cifar10_file(str(bad))


def test_load_cifar_directory(tmp_path):
    """The test split loads from test_batch.bin, scaled to [0, 1]; missing files are data errors"""
    write_cifar_file(tmp_path / "test_batch.bin", [1, 2, 3])
    data = load_cifar10(str(tmp_path), "test", limit=2)
    assert len(data) == 2
    assert data.images.max() <= 1.0
    assert data.images[0, 0, 0, 0] == pytest.approx(1 / 255)
    with pytest.raises(DataError):
        load_cifar10(str(tmp_path), "train")


def test_resize_nearest():
    """Nearest-neighbour resize repeats or drops pixels"""
    images = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    up = resize(images, 8)
    assert up.shape == (1, 1, 8, 8)
    assert up[0, 0, 1, 1] == 0 and up[0, 0, 7, 7] == 15
    down = resize(images, 2)
    assert down[0, 0].tolist() == [[0, 2], [8, 10]]
    assert resize(images, 4) is images


def test_normalize_and_record():
    """Train statistics are applied and recorded"""
    data = gen_synthetic(32, 8, 2, seed=1)
    mean, std = channel_stats(data)
    normed = normalize(data, mean, std)
    np.testing.assert_allclose(normed.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(normed.images.std(axis=(0, 2, 3)), 1.0, atol=1e-4)
    record = normalization_record(normed)
    assert set(record) == {"RUN_NORM_MEAN", "RUN_NORM_STD"}
    assert [float(v) for v in record["RUN_NORM_MEAN"].split(",")] == pytest.approx(mean.tolist())
    assert normalization_record(data) == {}


def test_batches_cover_dataset():
    """Shuffled batches visit every sample once; flips keep labels"""
    data = gen_synthetic(10, 8, 2, seed=0)
    rng = np.random.default_rng(0)
    seen = []
    for x, y in batches(data, 4, rng, np.random.default_rng(1)):
        assert len(x) == len(y) <= 4
        seen.extend(y.tolist())
    assert sorted(seen) == sorted(data.labels.tolist())
    first = next(batches(data, 3))
    np.testing.assert_array_equal(first[0], data.images[:3])


def test_load_datasets_uses_train_statistics():
    """Both splits are normalized with constants from the train split"""
    settings = load_settings(overrides={"TRAIN_SIZE": 20, "TEST_SIZE": 6, "N_CLASSES": 3, "RESOLUTION": 8})
    train, test = load_datasets(settings, resolution=12)
    assert train.resolution == test.resolution == 12
    np.testing.assert_array_equal(train.mean, test.mean)
    assert len(train) == 20 and len(test) == 6
