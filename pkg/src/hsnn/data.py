"""Loaders for the MNIST IDX and CIFAR-10 binary formats, plus batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

MNIST_MEAN = (0.1307,)
MNIST_STD = (0.3081,)
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


class DataFormatError(ValueError):
    """File bytes do not follow the expected on-disk layout."""


class DataConsistencyError(ValueError):
    """Individually valid files disagree with each other."""


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray        # N x C x H x W
    labels: np.ndarray        # N, int64
    mean: tuple = (0.0,)
    std: tuple = (1.0,)
    class_count: int = 10

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataConsistencyError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) == 0:
            raise ValueError("empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> "Dataset":
        """First ``n`` samples (all of them if ``n`` is larger)."""
        return replace(self, images=self.images[:n], labels=self.labels[:n])


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _idx_header(buf: bytes, magic: int, ndim: int, path) -> tuple:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise DataFormatError(f"{path}: truncated header (need {need} bytes at offset 0, have {len(buf)})")
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise DataFormatError(f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    payload = int(np.prod(dims))
    if len(buf) - need != payload:
        raise DataFormatError(
            f"{path}: payload at offset {need} holds {len(buf) - need} bytes, header promises {payload}")
    return dims, need


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 pixels, shape (N, rows, cols)."""
    buf = _read(path)
    dims, off = _idx_header(buf, IDX_IMAGES_MAGIC, 3, path)
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(dims)


def read_idx_labels(path) -> np.ndarray:
    buf = _read(path)
    dims, off = _idx_header(buf, IDX_LABELS_MAGIC, 1, path)
    return np.frombuffer(buf, dtype=np.uint8, offset=off).reshape(dims)


def write_idx_images(path, pixels: np.ndarray):
    pixels = np.asarray(pixels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, *pixels.shape) + pixels.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_mnist_idx(image_path, label_path, dtype=np.float32) -> Dataset:
    pix = read_idx_images(image_path)
    lab = read_idx_labels(label_path)
    if len(pix) != len(lab):
        raise DataConsistencyError(f"{len(pix)} images vs {len(lab)} labels")
    images = (pix.astype(dtype) / dtype(255))[:, None]
    return Dataset(images, lab.astype(np.int64), class_count=10)


def read_cifar10_records(paths: Sequence) -> tuple:
    """Raw ``(labels uint8 (N,), pixels uint8 (N, 3, 32, 32))``."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    labs, pix = [], []
    for p in paths:
        buf = _read(p)
        if len(buf) == 0 or len(buf) % CIFAR_RECORD:
            raise DataFormatError(
                f"{p}: length {len(buf)} is not a positive multiple of {CIFAR_RECORD}; "
                f"last record starts at offset {len(buf) - len(buf) % CIFAR_RECORD}")
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labs.append(rec[:, 0])
        pix.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    return np.concatenate(labs), np.concatenate(pix)


def write_cifar10_records(path, labels, pixels):
    labels = np.asarray(labels, dtype=np.uint8)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    Path(path).write_bytes(np.concatenate([labels[:, None], pixels], axis=1).tobytes())


def load_cifar10_bin(batch_paths, dtype=np.float32) -> Dataset:
    lab, pix = read_cifar10_records(batch_paths)
    if lab.max() >= 10:
        raise DataFormatError(f"label byte {int(lab.max())} outside 0..9")
    return Dataset(pix.astype(dtype) / dtype(255), lab.astype(np.int64), class_count=10)


def normalize(ds: Dataset, mean, std) -> Dataset:
    c = ds.images.shape[1]
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (c,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (c,))
    if np.any(std <= 0):
        raise ValueError("std must be positive in every channel")
    dt = ds.images.dtype
    x = (ds.images - mean.astype(dt)[:, None, None]) / std.astype(dt)[:, None, None]
    return replace(ds, images=x.astype(dt, copy=False), mean=tuple(mean), std=tuple(std))


def channel_stats(ds: Dataset) -> tuple:
    x = ds.images.astype(np.float64)
    return tuple(x.mean(axis=(0, 2, 3))), tuple(x.std(axis=(0, 2, 3)))


def batches(ds: Dataset, batch_size: int, shuffle: bool = False, seed=0) -> Iterator[tuple]:
    """One full pass; the last batch may be short.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(ds)
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))
        order = rng.permutation(n)
    else:
        order = None
    for start in range(0, n, batch_size):
        if order is None:
            sl = slice(start, start + batch_size)
            yield ds.images[sl], ds.labels[sl]
        else:
            idx = order[start:start + batch_size]
            yield ds.images[idx], ds.labels[idx]


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


def _find_dir(root: Path, names) -> Path:
    for cand in (root, root / "mnist", root / "cifar-10-batches-bin", root / "cifar10"):
        if all((cand / n).exists() for n in names):
            return cand
    raise FileNotFoundError(f"could not find {names[0]} under {root}")


def load_dataset(name: str, data_dir, split: str = "train", normalized: bool = True) -> Dataset:
    """Load ``mnist`` or ``cifar10`` from ``data_dir`` (the dataset's own
    subdirectory is also searched) and apply the default normalization."""
    root = Path(data_dir)
    if name == "mnist":
        d = _find_dir(root, MNIST_FILES[split])
        ds = load_mnist_idx(*(d / n for n in MNIST_FILES[split]))
        mean, std = MNIST_MEAN, MNIST_STD
    elif name == "cifar10":
        d = _find_dir(root, CIFAR_FILES[split])
        ds = load_cifar10_bin([d / n for n in CIFAR_FILES[split]])
        mean, std = CIFAR10_MEAN, CIFAR10_STD
    else:
        raise ValueError(f"unknown dataset {name!r}")
    return normalize(ds, mean, std) if normalized else ds


def augment_flip_crop(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus random ``pad``-pixel shift crop (NCHW)."""
    n, _, h, w = x.shape
    flip = rng.random(n) < 0.5
    out = x.copy()
    out[flip] = out[flip, :, :, ::-1]
    padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    for i in range(n):
        out[i] = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
    return out
