"""MNIST IDX loading, synthetic fixtures and minibatch plans."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IDXParseError, InputError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_ROWS = MNIST_COLS = 28
MNIST_CLASSES = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

DATA_DIR_ENV = "L0ASSO_DATA_DIR"


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = MNIST_CLASSES

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.split, self.num_classes)

    def astype(self, dtype):
        return Dataset(self.images.astype(dtype, copy=False), self.labels, self.split, self.num_classes)


def _read(source):
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    with open(source, "rb") as fh:
        return fh.read()


def _header(buf, n_fields, magic, what):
    size = 4 * n_fields
    if len(buf) < size:
        raise IDXParseError(f"{what} file truncated: header needs {size} bytes, got {len(buf)}", len(buf))
    fields = struct.unpack(f">{n_fields}I", buf[:size])
    if fields[0] != magic:
        raise IDXParseError(f"{what} file has magic 0x{fields[0]:08x}, expected 0x{magic:08x}", 0)
    return fields[1:]


def parse_idx_images(source):
    """Parse an IDX3 image file into float32 (N, 1, 28, 28) scaled to [0, 1]."""
    buf = _read(source)
    n, rows, cols = _header(buf, 4, IMAGES_MAGIC, "image")
    if rows != MNIST_ROWS:
        raise IDXParseError(f"image rows = {rows}, expected {MNIST_ROWS}", 8)
    if cols != MNIST_COLS:
        raise IDXParseError(f"image cols = {cols}, expected {MNIST_COLS}", 12)
    expected = 16 + n * rows * cols
    if len(buf) != expected:
        raise IDXParseError(f"image file has {len(buf)} bytes, header implies {expected}",
                            min(len(buf), expected))
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return (pixels.astype(np.float32) / 255.0).reshape(n, 1, rows, cols)


def parse_idx_labels(source, num_classes=MNIST_CLASSES):
    buf = _read(source)
    (n,) = _header(buf, 2, LABELS_MAGIC, "label")
    expected = 8 + n
    if len(buf) != expected:
        raise IDXParseError(f"label file has {len(buf)} bytes, header implies {expected}",
                            min(len(buf), expected))
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise IDXParseError(f"label {labels[bad[0]]} out of range [0, {num_classes})", 8 + int(bad[0]))
    return labels


def load_mnist_idx(images_path, labels_path, split="train"):
    images = parse_idx_images(images_path)
    labels = parse_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IDXParseError(f"{len(images)} images but {len(labels)} labels", 4)
    return Dataset(images, labels, split)


def default_data_dir():
    return os.environ.get(DATA_DIR_ENV, os.path.join(os.path.expanduser("~"), ".l0asso", "mnist"))


def load_mnist(directory=None, split="train"):
    directory = directory or default_data_dir()
    img, lbl = MNIST_FILES[split]
    return load_mnist_idx(os.path.join(directory, img), os.path.join(directory, lbl), split)


def make_synthetic(classes=2, dim=2, per_class=50, seed=0, spread=0.5, split="train"):
    """Gaussian blobs, one per class, with centres at least 3 apart.

    Centres are 3 times the columns of a random rotation when
    ``classes <= dim``, otherwise evenly spaced on a circle (a line when
    ``dim == 1``). Train and test splits share centres (drawn from ``seed``)
    but use independent sample draws.
    """
    if classes < 2 or dim < 1 or per_class < 1:
        raise ConfigError("need classes >= 2, dim >= 1 and per_class >= 1", "data.synthetic")
    centre_rng = np.random.default_rng(seed)
    rotation, _ = np.linalg.qr(centre_rng.normal(size=(dim, dim)))
    if classes <= dim:
        centres = 3.0 * rotation[:, :classes].T
    elif dim == 1:
        centres = 3.0 * (np.arange(classes) - (classes - 1) / 2)[:, None]
    else:
        angles = 2 * np.pi * np.arange(classes) / classes + centre_rng.uniform(0, 2 * np.pi)
        radius = 1.5 / np.sin(np.pi / classes)
        centres = radius * (np.cos(angles)[:, None] * rotation[:, 0] + np.sin(angles)[:, None] * rotation[:, 1])
    rng = np.random.default_rng([seed, {"train": 0, "test": 1}.get(split, 2)])
    x = np.concatenate([c + spread * rng.normal(size=(per_class, dim)) for c in centres])
    y = np.repeat(np.arange(classes), per_class)
    return Dataset(x, y, split, classes)


@dataclass
class BatchPlan:
    batch_size: int = 128
    seed: int = 0

    def permutation(self, n, epoch):
        return np.random.default_rng([self.seed, epoch]).permutation(n)


def batches(dataset, plan, epoch=0):
    """Yield ``(images, labels)`` minibatches for one shuffled epoch; the last may be short."""
    n = len(dataset)
    if not 1 <= plan.batch_size <= n:
        raise ConfigError(f"batch size {plan.batch_size} must lie in [1, {n}]", "train.batch_size")
    perm = plan.permutation(n, epoch)
    for i in range(0, n, plan.batch_size):
        idx = perm[i:i + plan.batch_size]
        yield dataset.images[idx], dataset.labels[idx]
