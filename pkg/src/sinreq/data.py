"""Datasets: synthetic blobs/spirals and IDX-format image files.

Synthetic generators are pure functions of their parameters and seed, with
features standardized to zero mean and unit variance per dimension. The IDX
reader/writer is bit-exact: big-endian magic and dimension words, raw u8
payload, and any truncation or mismatch is a parse error naming the field,
never a partially loaded dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IdxParseError, ParameterError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature array plus integer class labels."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ParameterError(f"{len(self.x)} samples but {len(self.y)} labels")

    def __len__(self):
        return len(self.x)


def _standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    return (x - mean) / std


def make_blobs(classes, samples_per_class, noise, seed, dim=2, centers=None) -> Dataset:
    """Gaussian clusters around seeded (or given) class centers."""
    if classes < 2 or samples_per_class < 1:
        raise ParameterError("need at least two classes and one sample per class")
    if noise < 0.0:
        raise ParameterError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = rng.uniform(-4.0, 4.0, (classes, dim))
    else:
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (classes, dim):
            raise ParameterError(f"centers must have shape {(classes, dim)}")
    y = np.repeat(np.arange(classes), samples_per_class)
    x = centers[y] + noise * rng.standard_normal((len(y), dim))
    return Dataset(_standardize(x), y)


def make_spirals(classes, samples_per_class, noise, seed, turns=1.75) -> Dataset:
    """Interleaved spiral arms (one per class) with angular noise."""
    if classes < 2 or samples_per_class < 1:
        raise ParameterError("need at least two classes and one sample per class")
    if noise < 0.0:
        raise ParameterError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(classes):
        t = np.linspace(0.0, 1.0, samples_per_class)
        radius = 0.15 + 0.85 * t
        theta = 2.0 * np.pi * c / classes + turns * 2.0 * np.pi * t
        theta = theta + noise * rng.standard_normal(samples_per_class)
        xs.append(np.column_stack((radius * np.cos(theta), radius * np.sin(theta))))
        ys.append(np.full(samples_per_class, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    return Dataset(_standardize(x), y)


def split_dataset(ds: Dataset, train_fraction, val_fraction, seed):
    """Seeded shuffle split into (train, val)."""
    if abs(train_fraction + val_fraction - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(round(train_fraction * len(ds)))
    tr, va = perm[:n_train], perm[n_train:]
    return Dataset(ds.x[tr], ds.y[tr]), Dataset(ds.x[va], ds.y[va])


def _read_header_words(blob, n_words, field):
    if len(blob) < 4 * n_words:
        raise IdxParseError(field, f"file too short for {field}")
    return [int.from_bytes(blob[4 * i : 4 * i + 4], "big") for i in range(n_words)]


def load_idx_images(path) -> np.ndarray:
    """Raw u8 images [count, rows, cols] from an IDX image file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (magic,) = _read_header_words(blob, 1, "magic")
    if magic != IDX_IMAGE_MAGIC:
        raise IdxParseError("magic", f"expected image magic {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}")
    count, rows, cols = _read_header_words(blob[4:], 3, "dimensions")
    payload = blob[16:]
    if len(payload) != count * rows * cols:
        raise IdxParseError(
            "payload",
            f"payload holds {len(payload)} bytes, header promises {count * rows * cols}",
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols).copy()


def load_idx_labels(path) -> np.ndarray:
    """Raw u8 labels [count] from an IDX label file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (magic,) = _read_header_words(blob, 1, "magic")
    if magic != IDX_LABEL_MAGIC:
        raise IdxParseError("magic", f"expected label magic {IDX_LABEL_MAGIC:#010x}, got {magic:#010x}")
    (count,) = _read_header_words(blob[4:], 1, "dimensions")
    payload = blob[8:]
    if len(payload) != count:
        raise IdxParseError(
            "payload", f"payload holds {len(payload)} bytes, header promises {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8).copy()


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ParameterError("images must be [count, rows, cols]")
    with open(path, "wb") as fh:
        fh.write(IDX_IMAGE_MAGIC.to_bytes(4, "big"))
        for dim in images.shape:
            fh.write(int(dim).to_bytes(4, "big"))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ParameterError("labels must be one-dimensional")
    with open(path, "wb") as fh:
        fh.write(IDX_LABEL_MAGIC.to_bytes(4, "big"))
        fh.write(len(labels).to_bytes(4, "big"))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path) -> Dataset:
    """Paired image/label IDX files as a dataset of [N,1,H,W] pixels in [0,1]."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxParseError(
            "count", f"{len(images)} images but {len(labels)} labels"
        )
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64))
